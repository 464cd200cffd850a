//! Single optimisation steps. Each takes a batch of transitions and the
//! components it updates, and returns the batch loss before the update.

use super::actor::{actor_loss, bc_loss, net_value_grad, reg_value, standard_normal, ActionSource, RegMode};
use super::attribution::argmax_first;
use super::critic::{regression_loss, Critic, LossKind, RegTarget};
use crate::error::{Error, Result};
use crate::numkit::{Adam, GaussianHead};
use crate::offline_data::LatentTransition;
use crate::rng::Rng;

pub type Batch<'a> = [&'a LatentTransition];

fn attribution(t: &LatentTransition) -> Result<usize> {
    t.attribution
        .map(|a| a as usize)
        .ok_or_else(|| Error::Contract("transition has no expert attribution".into()))
}

fn check_finite(stage: &'static str, loss: f64) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::NonFiniteLoss {
            stage: stage.into(),
            detail: format!("loss = {loss}"),
        })
    }
}

/// `r + gamma * V(z_next)` with no bootstrap on terminal transitions.
pub fn td_target(t: &LatentTransition, gamma: f64, v_next: impl FnOnce(&[f64]) -> f64) -> f64 {
    if t.terminal || gamma == 0.0 {
        t.r
    } else {
        t.r + gamma * v_next(&t.z_next)
    }
}

/// Regress every Q net toward `r + gamma V(z_next)`; `V` is the target copy
/// when `target_v` is set and the online net otherwise.
pub fn q_step(
    qs: &mut [Critic],
    v: Option<&Critic>,
    target_v: bool,
    batch: &Batch,
    gamma: f64,
    polyak: f64,
    rng: &mut Rng,
) -> Result<f64> {
    let next = if gamma == 0.0 || batch.iter().all(|t| t.terminal) {
        vec![Vec::new(); batch.len()]
    } else {
        let v = v.expect("bootstrapping needs a value net");
        let zn: Vec<&[f64]> = batch.iter().map(|t| t.z_next.as_slice()).collect();
        if target_v {
            v.eval_target_batch(&zn)
        } else {
            v.net.forward_batch(&zn)
        }
    };
    let targets: Vec<Vec<RegTarget>> = batch
        .iter()
        .zip(next)
        .map(|(t, nx)| vec![RegTarget::new(0, td_target(t, gamma, |_| nx[0]))])
        .collect();
    let inputs: Vec<&[f64]> = batch.iter().map(|t| t.z_a.as_slice()).collect();
    let mut total = 0.0;
    for q in qs.iter_mut() {
        total += q.fit(&inputs, &targets, LossKind::Squared, polyak, rng)?;
    }
    check_finite("q_step", total / qs.len() as f64)
}

/// Bandit: Q regresses to the immediate reward.
pub fn bandit_step(q: &mut Critic, batch: &Batch, polyak: f64, rng: &mut Rng) -> Result<f64> {
    q_step(std::slice::from_mut(q), None, false, batch, 0.0, polyak, rng)
}

/// Conservative Q value: minimum over the dual pair, or over ensemble masks.
pub fn q_min(qs: &[Critic], x: &[f64], use_target: bool, masks: &[Vec<crate::numkit::DropoutMasks>]) -> f64 {
    qs.iter()
        .enumerate()
        .map(|(k, q)| {
            if use_target {
                q.eval_target_min(x, masks.get(k).map(|m| m.as_slice()).unwrap_or(&[]))[0]
            } else {
                q.eval(x)[0]
            }
        })
        .fold(f64::INFINITY, f64::min)
}

pub struct SoftTargets {
    pub alpha: f64,
    pub reg: RegMode,
    pub source: ActionSource,
    pub target_q: bool,
}

/// Soft value targets `Q(z_hat) - alpha * reg(z')` with `z' ~ G(.|z)`.
pub fn sac_v_targets(
    qs: &[Critic],
    actor: &GaussianHead,
    prior: Option<&GaussianHead>,
    batch: &Batch,
    cfg: &SoftTargets,
    rng: &mut Rng,
) -> Vec<f64> {
    let masks: Vec<_> = qs.iter().map(|q| if cfg.target_q { q.ensemble_masks(rng) } else { Vec::new() }).collect();
    batch
        .iter()
        .map(|t| {
            let g = actor.dist(&t.z);
            let zp = g.sample(rng).sample;
            let z_hat: &[f64] = match cfg.source {
                ActionSource::TeacherForced => &t.z_a,
                ActionSource::Latent => &zp,
            };
            let q = q_min(qs, z_hat, cfg.target_q, &masks);
            let reg = if cfg.alpha == 0.0 { 0.0 } else { reg_value(cfg.reg, actor, prior, &t.z, &zp) };
            q - cfg.alpha * reg
        })
        .collect()
}

pub fn sac_v_step(
    v: &mut Critic,
    qs: &[Critic],
    actor: &GaussianHead,
    prior: Option<&GaussianHead>,
    batch: &Batch,
    cfg: &SoftTargets,
    polyak: f64,
    rng: &mut Rng,
) -> Result<f64> {
    let ys = sac_v_targets(qs, actor, prior, batch, cfg, rng);
    let targets: Vec<Vec<RegTarget>> = ys.into_iter().map(|y| vec![RegTarget::new(0, y)]).collect();
    let inputs: Vec<&[f64]> = batch.iter().map(|t| t.z.as_slice()).collect();
    let l = v.fit(&inputs, &targets, LossKind::Squared, polyak, rng)?;
    check_finite("sac_v_step", l)
}

/// Ascend `Q(z') - alpha * reg(z')` through the reparameterised sample,
/// scoring with the minimum of the online Q nets.
#[allow(clippy::too_many_arguments)]
pub fn sac_actor_step(
    actor: &mut GaussianHead,
    opt: &mut Adam,
    qs: &[Critic],
    prior: Option<&GaussianHead>,
    batch: &Batch,
    alpha: f64,
    reg: RegMode,
    rng: &mut Rng,
) -> Result<f64> {
    let d = actor.mean_net.out_dim();
    let eps: Vec<Vec<f64>> = batch.iter().map(|_| standard_normal(d, rng)).collect();
    let zs: Vec<&[f64]> = batch.iter().map(|t| t.z.as_slice()).collect();
    let q = |x: &[f64]| {
        qs.iter()
            .map(|c| net_value_grad(&c.net, x))
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .expect("at least one Q net")
    };
    let (loss, grads) = actor_loss(actor, prior, q, &zs, &eps, alpha, reg);
    opt.step(actor, &grads)?;
    check_finite("sac_actor_step", loss)
}

/// Expectile regression of V toward the target Q at logged actions.
pub fn iql_v_loss(v: &Critic, q: &Critic, batch: &Batch, tau: f64, q_masks: &[crate::numkit::DropoutMasks]) -> (f64, crate::numkit::Grads) {
    let targets: Vec<Vec<RegTarget>> = batch
        .iter()
        .map(|t| vec![RegTarget::new(0, q.eval_target_min(&t.z_a, q_masks)[0])])
        .collect();
    let inputs: Vec<&[f64]> = batch.iter().map(|t| t.z.as_slice()).collect();
    regression_loss(&v.net, &inputs, &targets, LossKind::Expectile(tau), None)
}

/// The same regression over the frozen candidate latents, each weighted
/// `1/(m+1)`.
pub fn saiql_v_loss(v: &Critic, q: &Critic, batch: &Batch, tau: f64, q_masks: &[crate::numkit::DropoutMasks]) -> Result<(f64, crate::numkit::Grads)> {
    let mut targets = Vec::with_capacity(batch.len());
    for t in batch {
        if t.candidates.is_empty() {
            return Err(Error::Contract("SAIQL needs augmented transitions".into()));
        }
        let w = 1.0 / t.candidates.len() as f64;
        targets.push(
            t.candidates
                .iter()
                .map(|c| RegTarget {
                    head: 0,
                    value: q.eval_target_min(c, q_masks)[0],
                    weight: w,
                })
                .collect(),
        );
    }
    let inputs: Vec<&[f64]> = batch.iter().map(|t| t.z.as_slice()).collect();
    Ok(regression_loss(&v.net, &inputs, &targets, LossKind::Expectile(tau), None))
}

pub fn iql_v_step(v: &mut Critic, q: &Critic, batch: &Batch, tau: f64, polyak: f64, rng: &mut Rng) -> Result<f64> {
    let masks = q.ensemble_masks(rng);
    let (l, g) = iql_v_loss(v, q, batch, tau, &masks);
    v.apply(&g, polyak)?;
    check_finite("iql_v_step", l)
}

pub fn saiql_v_step(v: &mut Critic, q: &Critic, batch: &Batch, tau: f64, polyak: f64, rng: &mut Rng) -> Result<f64> {
    let masks = q.ensemble_masks(rng);
    let (l, g) = saiql_v_loss(v, q, batch, tau, &masks)?;
    v.apply(&g, polyak)?;
    check_finite("saiql_v_step", l)
}

/// Per-expert critic heads sharing a trunk: `q` maps `z_a` and `v` maps `z`
/// to `m+1` outputs.
#[derive(Clone, Debug)]
pub struct MultiHeadCritic {
    pub q: Critic,
    pub v: Critic,
}

pub struct FtleLosses {
    pub q: f64,
    pub v: f64,
}

/// Losses of the multi-head critic. All Q heads learn from every
/// transition; V head `i` only from transitions attributed to `i`.
pub fn ftle_losses(mh: &MultiHeadCritic, batch: &Batch, gamma: f64) -> Result<((f64, crate::numkit::Grads), (f64, crate::numkit::Grads))> {
    let heads = mh.q.net.out_dim();
    let za: Vec<&[f64]> = batch.iter().map(|t| t.z_a.as_slice()).collect();
    let zs: Vec<&[f64]> = batch.iter().map(|t| t.z.as_slice()).collect();
    let zn: Vec<&[f64]> = batch.iter().map(|t| t.z_next.as_slice()).collect();
    let v_next = mh.v.eval_target_batch(&zn);
    let q_tar = mh.q.eval_target_batch(&za);
    let mut q_targets = Vec::with_capacity(batch.len());
    let mut v_targets = Vec::with_capacity(batch.len());
    for (k, t) in batch.iter().enumerate() {
        let boot = !(t.terminal || gamma == 0.0);
        q_targets.push(
            (0..heads)
                .map(|i| RegTarget::new(i, t.r + if boot { gamma * v_next[k][i] } else { 0.0 }))
                .collect::<Vec<_>>(),
        );
        let i = attribution(t)?;
        v_targets.push(vec![RegTarget::new(i, q_tar[k][i])]);
    }
    Ok((
        regression_loss(&mh.q.net, &za, &q_targets, LossKind::Squared, None),
        regression_loss(&mh.v.net, &zs, &v_targets, LossKind::Squared, None),
    ))
}

pub fn ftle_step(mh: &mut MultiHeadCritic, batch: &Batch, gamma: f64, polyak: f64) -> Result<FtleLosses> {
    let ((lq, gq), (lv, gv)) = ftle_losses(mh, batch, gamma)?;
    mh.q.apply(&gq, polyak)?;
    mh.v.apply(&gv, polyak)?;
    Ok(FtleLosses {
        q: check_finite("ftle_step", lq)?,
        v: check_finite("ftle_step", lv)?,
    })
}

/// DQN loss on the expert-value function: head `i(z,Y)` regresses toward
/// `r + gamma max_j Lambda_tar(z_next, j)`.
pub fn moevrl_loss(lambda: &Critic, batch: &Batch, gamma: f64) -> Result<(f64, crate::numkit::Grads)> {
    let zn: Vec<&[f64]> = batch.iter().map(|t| t.z_next.as_slice()).collect();
    let next = lambda.eval_target_batch(&zn);
    let mut targets = Vec::with_capacity(batch.len());
    for (t, nx) in batch.iter().zip(next) {
        let y = td_target(t, gamma, |_| nx.into_iter().fold(f64::NEG_INFINITY, f64::max));
        targets.push(vec![RegTarget::new(attribution(t)?, y)]);
    }
    let zs: Vec<&[f64]> = batch.iter().map(|t| t.z.as_slice()).collect();
    Ok(regression_loss(&lambda.net, &zs, &targets, LossKind::Squared, None))
}

pub fn moevrl_step(lambda: &mut Critic, batch: &Batch, gamma: f64, polyak: f64) -> Result<f64> {
    let (l, g) = moevrl_loss(lambda, batch, gamma)?;
    lambda.apply(&g, polyak)?;
    check_finite("moevrl_step", l)
}

/// `lambda*(z)`: the best expert under the learned expert values.
pub fn best_expert(lambda: &Critic, z: &[f64]) -> usize {
    argmax_first(&lambda.eval(z))
}

/// Maximum-likelihood fit of the behaviour prior to logged action latents.
pub fn bc_step(prior: &mut GaussianHead, opt: &mut Adam, batch: &Batch) -> Result<f64> {
    let zs: Vec<&[f64]> = batch.iter().map(|t| t.z.as_slice()).collect();
    let ys: Vec<&[f64]> = batch.iter().map(|t| t.z_a.as_slice()).collect();
    let (l, g) = bc_loss(prior, &zs, &ys);
    opt.step(prior, &g)?;
    check_finite("bc_step", l)
}
