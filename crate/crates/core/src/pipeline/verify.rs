//! The oracle suite behind `verify`: every learner that has a brute-force
//! counterpart is checked against it.

use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval_report::{kl_to_uniform, UserModel};
use crate::moe_model::{expert_score_grad, primitive_loss, sample_noise, ModelConfig, MoeLm, PrimitiveView};
use crate::numkit::{DenseNet, GaussianHead, Grads, Params, StdBounds};
use crate::offline_data::LatentTransition;
use crate::oracle::{
    bellman_sweep, build_tabular, expectile_bisect, grad_check, myopic_policy, policy_eval, policy_return,
    value_iteration, TabularMoEMDP,
};
use crate::rl_suite::{
    actor_loss, bc_loss, best_expert, expectile_dloss, ftle_losses, ftle_step, iql_v_loss, iql_v_step, latent_head,
    moevrl_loss, moevrl_step, net_value_grad, q_step, regression_loss, saiql_v_loss, standard_normal, Critic,
    LossKind, MultiHeadCritic, RegMode, RegTarget,
};
use crate::rng::{stream, tag, Rng};
use crate::toylang::{gen_template, ConversationHistory, Intent, Lexicon, Utterance, EOS};
use crate::user_sim::{mood_band, trust_band, EnvConfig, Environment, UserEnv};

/// Outcome of one oracle comparison.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Check { name, passed, detail }
    }
}

const GRAD_H: f64 = 1e-5;
const GRAD_FLOOR: f64 = 1e-6;
pub const GRAD_TOL: f64 = 1e-4;

fn onehot(n: usize, k: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[k] = 1.0;
    v
}

fn random_transition(d: usize, m: usize, rng: &mut Rng) -> LatentTransition {
    LatentTransition {
        z: standard_normal(d, rng),
        z_a: standard_normal(d, rng),
        r: rng.random_range(-1.0..1.0),
        z_next: standard_normal(d, rng),
        terminal: rng.random_bool(0.2),
        turn: 0,
        action: Utterance::new(vec![EOS]),
        reply: Utterance::new(vec![EOS]),
        expert: 0,
        attribution: Some(rng.random_range(0..m) as u8),
        candidates: (0..m).map(|_| standard_normal(d, rng)).collect(),
    }
}

/// Worst relative error of a loss over a parameter vector.
fn check_params<P: Params + Clone>(
    p: &P,
    analytic: &Grads,
    coords: Option<&[usize]>,
    mut loss: impl FnMut(&P) -> f64,
) -> f64 {
    let mut probe = p.clone();
    grad_check(
        |w| {
            probe.set_flat(w);
            loss(&probe)
        },
        &p.flat(),
        &analytic.flat(),
        GRAD_H,
        GRAD_FLOOR,
        coords,
    )
    .max_rel_err
}

/// Pre-activations closer to zero than this make central differences
/// straddle a ReLU kink, where the loss has no derivative.
const KINK_MARGIN: f64 = 1e-3;

/// Random nets and data for one gradient sweep.
struct GradFixture {
    head: GaussianHead,
    items: Vec<(Vec<f64>, Vec<f64>, f64)>,
    data: Vec<LatentTransition>,
    q: Critic,
    v: Critic,
    mh: MultiHeadCritic,
    lam: Critic,
    actor: GaussianHead,
    prior: GaussianHead,
    noise: Vec<Vec<f64>>,
    um: UserModel,
}

fn net_margin(net: &DenseNet, xs: &[&[f64]]) -> f64 {
    xs.iter().map(|x| net.forward_tape(x).min_relu_margin(net)).fold(f64::INFINITY, f64::min)
}

fn head_margin(h: &GaussianHead, xs: &[&[f64]]) -> f64 {
    net_margin(&h.mean_net, xs).min(net_margin(&h.scale_net, xs))
}

impl GradFixture {
    fn new(seed: u64, attempt: u64) -> Self {
        let mut rng = stream(seed, &[tag("gradcheck-nets"), attempt]);
        let (d, m) = (4, 3);
        let head = latent_head(d, &[8], d, StdBounds::default(), &mut rng);
        let items = (0..4)
            .map(|_| (standard_normal(d, &mut rng), standard_normal(d, &mut rng), rng.random_range(-1.0..1.0)))
            .collect();
        let data: Vec<LatentTransition> = (0..6).map(|_| random_transition(d, m, &mut rng)).collect();
        let noise = data.iter().map(|_| standard_normal(d, &mut rng)).collect();
        GradFixture {
            head,
            items,
            data,
            q: Critic::new(d, &[8, 8], 1, 1e-3, None, &mut rng),
            v: Critic::new(d, &[8, 8], 1, 1e-3, None, &mut rng),
            mh: MultiHeadCritic {
                q: Critic::new(d, &[8, 8], m, 1e-3, None, &mut rng),
                v: Critic::new(d, &[8, 8], m, 1e-3, None, &mut rng),
            },
            lam: Critic::new(d, &[8, 8], m, 1e-3, None, &mut rng),
            actor: latent_head(d, &[8], d, StdBounds::default(), &mut rng),
            prior: latent_head(d, &[8], d, StdBounds::default(), &mut rng),
            noise,
            um: UserModel::new(d, d, &[8, 8], 1e-3, &mut rng),
        }
    }

    /// Smallest distance of any ReLU pre-activation from its kink at the
    /// points where the checked losses are differentiated.
    fn kink_margin(&self) -> f64 {
        let zs: Vec<&[f64]> = self.data.iter().map(|t| t.z.as_slice()).collect();
        let zas: Vec<&[f64]> = self.data.iter().map(|t| t.z_a.as_slice()).collect();
        let item_z: Vec<&[f64]> = self.items.iter().map(|t| t.0.as_slice()).collect();
        let samples: Vec<Vec<f64>> = zs
            .iter()
            .zip(&self.noise)
            .map(|(z, e)| {
                let g = self.actor.dist(z);
                g.mean.iter().zip(&g.std).zip(e).map(|((m, s), e)| m + s * e).collect()
            })
            .collect();
        let sample_refs: Vec<&[f64]> = samples.iter().map(|x| x.as_slice()).collect();
        [
            head_margin(&self.head, &item_z),
            net_margin(&self.q.net, &zas),
            net_margin(&self.q.net, &sample_refs),
            net_margin(&self.v.net, &zs),
            net_margin(&self.mh.q.net, &zas),
            net_margin(&self.mh.v.net, &zs),
            net_margin(&self.lam.net, &zs),
            head_margin(&self.actor, &zs),
            head_margin(&self.prior, &zs),
            net_margin(&self.um.reward, &zas),
            net_margin(&self.um.next, &zas),
        ]
        .into_iter()
        .fold(f64::INFINITY, f64::min)
    }
}

/// Finite-difference check of every trained loss for one seed. Returns
/// `(loss name, max relative error)` pairs.
pub fn gradient_errors(seed: u64, lm: &mut (MoeLm, Vec<(ConversationHistory, Utterance)>)) -> Vec<(&'static str, f64)> {
    let mut rng = stream(seed, &[tag("gradcheck")]);
    let mut out = Vec::new();

    // primitive LM loss, on a coordinate subsample
    let (model, batch) = lm;
    let eps = sample_noise(batch.len(), model.latent_dim(), &mut rng);
    let (_, g) = primitive_loss(model, batch, &eps, 0.1);
    let n = PrimitiveView(model).flat().len();
    let coords: Vec<usize> = (seed as usize % 97..n).step_by(97).collect();
    let flat = PrimitiveView(model).flat();
    let base = model.clone();
    let rep = grad_check(
        |p| {
            let mut mm = base.clone();
            PrimitiveView(&mut mm).set_flat(p);
            let (l, _) = primitive_loss(&mm, batch, &eps, 0.1);
            l.nll + 0.1 * l.kl
        },
        &flat,
        &g.flat(),
        GRAD_H,
        GRAD_FLOOR,
        Some(&coords),
    );
    out.push(("primitive", rep.max_rel_err));

    let mut attempt = 0u64;
    let fx = loop {
        let fx = GradFixture::new(seed, attempt);
        if fx.kink_margin() >= KINK_MARGIN {
            break fx;
        }
        attempt += 1;
    };
    let GradFixture { head, items, data, q, v, mh, lam, actor, prior, noise, um } = &fx;
    let batch: Vec<&LatentTransition> = data.iter().collect();

    // expert REINFORCE surrogate
    let g = expert_score_grad(head, items);
    out.push((
        "expert_reinforce",
        check_params(head, &g, None, |h| {
            -items.iter().map(|(z, zp, adv)| adv * h.dist(z).log_prob(zp)).sum::<f64>() / items.len() as f64
        }),
    ));

    // Bellman regression of Q
    let inputs: Vec<&[f64]> = batch.iter().map(|t| t.z_a.as_slice()).collect();
    let targets: Vec<Vec<RegTarget>> = batch
        .iter()
        .map(|t| vec![RegTarget::new(0, t.r + 0.8 * v.eval_target(&t.z_next)[0])])
        .collect();
    let (_, g) = regression_loss(&q.net, &inputs, &targets, LossKind::Squared, None);
    out.push((
        "q_bellman",
        check_params(&q.net, &g, None, |net| regression_loss(net, &inputs, &targets, LossKind::Squared, None).0),
    ));

    // IQL and SAIQL expectile value losses
    let (_, g) = iql_v_loss(v, q, &batch, 0.9, &[]);
    out.push((
        "iql_v",
        check_params(&v.net, &g, None, |net| {
            let c = Critic { net: net.clone(), ..v.clone() };
            iql_v_loss(&c, q, &batch, 0.9, &[]).0
        }),
    ));
    let (_, g) = saiql_v_loss(v, q, &batch, 0.9, &[]).expect("augmented batch");
    out.push((
        "saiql_v",
        check_params(&v.net, &g, None, |net| {
            let c = Critic { net: net.clone(), ..v.clone() };
            saiql_v_loss(&c, q, &batch, 0.9, &[]).expect("augmented batch").0
        }),
    ));

    // FtLE multi-head critic
    let ((_, gq), (_, gv)) = ftle_losses(mh, &batch, 0.8).expect("attributed batch");
    out.push((
        "ftle_q",
        check_params(&mh.q.net, &gq, None, |net| {
            let c = MultiHeadCritic {
                q: Critic { net: net.clone(), ..mh.q.clone() },
                v: mh.v.clone(),
            };
            ftle_losses(&c, &batch, 0.8).expect("attributed batch").0 .0
        }),
    ));
    out.push((
        "ftle_v",
        check_params(&mh.v.net, &gv, None, |net| {
            let c = MultiHeadCritic {
                q: mh.q.clone(),
                v: Critic { net: net.clone(), ..mh.v.clone() },
            };
            ftle_losses(&c, &batch, 0.8).expect("attributed batch").1 .0
        }),
    ));

    // MoE-VRL expert-value DQN loss
    let (_, g) = moevrl_loss(lam, &batch, 0.8).expect("attributed batch");
    out.push((
        "moevrl",
        check_params(&lam.net, &g, None, |net| {
            let c = Critic { net: net.clone(), ..lam.clone() };
            moevrl_loss(&c, &batch, 0.8).expect("attributed batch").0
        }),
    ));

    // actor objectives and behaviour cloning
    let zs: Vec<&[f64]> = batch.iter().map(|t| t.z.as_slice()).collect();
    let qf = |x: &[f64]| net_value_grad(&q.net, x);
    for (name, mode) in [("actor_shannon", RegMode::Shannon), ("actor_kl", RegMode::Kl)] {
        let (_, g) = actor_loss(actor, Some(prior), qf, &zs, noise, 0.3, mode);
        out.push((
            name,
            check_params(actor, &g, None, |h| actor_loss(h, Some(prior), qf, &zs, noise, 0.3, mode).0),
        ));
    }
    let ys: Vec<&[f64]> = batch.iter().map(|t| t.z_a.as_slice()).collect();
    let (_, g) = bc_loss(actor, &zs, &ys);
    out.push(("bc", check_params(actor, &g, None, |h| bc_loss(h, &zs, &ys).0)));

    // user model heads
    let ((_, gr), (_, gn)) = um.losses(&batch);
    let inputs: Vec<&[f64]> = batch.iter().map(|t| t.z_a.as_slice()).collect();
    let rt: Vec<Vec<RegTarget>> = batch.iter().map(|t| vec![RegTarget::new(0, t.r)]).collect();
    let nt: Vec<Vec<RegTarget>> = batch
        .iter()
        .map(|t| t.z_next.iter().enumerate().map(|(k, &x)| RegTarget::new(k, x)).collect())
        .collect();
    out.push((
        "user_reward",
        check_params(&um.reward, &gr, None, |net| regression_loss(net, &inputs, &rt, LossKind::Squared, None).0),
    ));
    out.push((
        "user_next",
        check_params(&um.next, &gn, None, |net| regression_loss(net, &inputs, &nt, LossKind::Squared, None).0),
    ));
    out
}

/// Small LM and batch shared by the gradient sweep.
pub fn gradient_lm(seed: u64) -> (MoeLm, Vec<(ConversationHistory, Utterance)>) {
    let lex = Lexicon::shipped();
    let cfg = ModelConfig {
        hidden: 12,
        ..ModelConfig::default()
    };
    let model = MoeLm::new(cfg, &lex, seed);
    let x = ConversationHistory::new(Utterance::new(vec![40, 55, EOS]));
    let batch = vec![
        (x.clone(), Utterance::new(vec![7, 44, 50, EOS])),
        (x.with_action(&Utterance::new(vec![8, EOS])), Utterance::new(vec![30, 3, EOS])),
    ];
    (model, batch)
}

pub fn gradient_suite(seeds: u64) -> Check {
    let mut worst = ("", 0.0f64, 0u64);
    for seed in 0..seeds {
        let mut lm = gradient_lm(seed);
        for (name, err) in gradient_errors(seed, &mut lm) {
            if err > worst.1 || !err.is_finite() {
                worst = (name, err, seed);
            }
        }
    }
    Check::new(
        "gradients",
        worst.1 < GRAD_TOL,
        format!("{seeds} seeds, worst relative error {:.2e} ({} at seed {})", worst.1, worst.0, worst.2),
    )
}

/// Minimise the mean expectile loss over a scalar by gradient descent.
pub fn expectile_descent(xs: &[f64], tau: f64) -> f64 {
    let n = xs.len() as f64;
    let mut v = xs.iter().sum::<f64>() / n;
    let step = 0.5 / tau.max(1.0 - tau);
    for _ in 0..200_000 {
        let g = -xs.iter().map(|x| expectile_dloss(x - v, tau)).sum::<f64>() / n;
        let nv = v - step * g;
        if (nv - v).abs() < 1e-14 {
            return nv;
        }
        v = nv;
    }
    v
}

pub const EXPECTILE_TAUS: [f64; 10] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.99];

pub fn expectile_suite(samples: usize, seed: u64) -> Check {
    let mut rng = stream(seed, &[tag("expectile")]);
    let (mut worst, mut worst_mean) = (0.0f64, 0.0f64);
    for _ in 0..samples {
        let n = rng.random_range(2..40);
        let scale = rng.random_range(0.1..5.0);
        let xs: Vec<f64> = (0..n).map(|_| { let e: f64 = StandardNormal.sample(&mut rng); scale * e }).collect();
        for tau in EXPECTILE_TAUS {
            let a = expectile_descent(&xs, tau);
            let b = expectile_bisect(&xs, tau);
            worst = worst.max((a - b).abs());
            if tau == 0.5 {
                let mean = xs.iter().sum::<f64>() / n as f64;
                worst_mean = worst_mean.max((a - mean).abs()).max((b - mean).abs());
            }
        }
    }
    Check::new(
        "expectile",
        worst < 1e-4 && worst_mean < 1e-6,
        format!("{samples} samples: descent vs bisection {worst:.2e}, tau=0.5 vs mean {worst_mean:.2e}"),
    )
}

/// Three decision states in a row and an absorbing end; action gaps are
/// small so the top-expectile bias stays well below the tolerance.
pub fn chain_mdp() -> TabularMoEMDP {
    TabularMoEMDP::deterministic(
        vec![vec![1, 2], vec![2, 3], vec![3, 3], vec![3, 3]],
        vec![vec![0.2, 0.35], vec![0.3, 0.5], vec![0.5, 0.4], vec![0.0, 0.0]],
        vec![false, false, false, true],
        0,
        0.8,
    )
}

/// Transitions over every non-terminal `(s, a)` of a deterministic MDP with
/// one-hot state features and one-hot state-action features.
fn pair_transitions(mdp: &TabularMoEMDP) -> Vec<LatentTransition> {
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let mut out = Vec::new();
    for s in 0..ns {
        if mdp.terminal[s] {
            continue;
        }
        for a in 0..na {
            let s2 = mdp.successor(s, a);
            out.push(LatentTransition {
                z: onehot(ns, s),
                z_a: onehot(ns * na, s * na + a),
                r: mdp.reward[s][a],
                z_next: onehot(ns, s2),
                terminal: mdp.terminal[s2],
                turn: 0,
                action: Utterance::new(vec![EOS]),
                reply: Utterance::new(vec![EOS]),
                expert: a,
                attribution: Some(a as u8),
                candidates: Vec::new(),
            });
        }
    }
    out
}

/// Alternating Bellman and expectile updates on the chain; returns the
/// worst `|Q - Q*|` over non-terminal state-action pairs.
pub fn iql_chain_error(steps: usize, tau: f64, seed: u64) -> f64 {
    let mdp = chain_mdp();
    let vi = value_iteration(&mdp, 1e-12);
    let data = pair_transitions(&mdp);
    let batch: Vec<&LatentTransition> = data.iter().collect();
    let mut rng = stream(seed, &[tag("iql-chain")]);
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let mut q = Critic::new(ns * na, &[], 1, 1e-2, None, &mut rng);
    let mut v = Critic::new(ns, &[], 1, 1e-2, None, &mut rng);
    for k in 0..steps {
        let lr = if k < steps / 2 {
            1e-2
        } else if k < 3 * steps / 4 {
            1e-3
        } else {
            1e-4
        };
        q.opt.config.lr = lr;
        v.opt.config.lr = lr;
        q_step(std::slice::from_mut(&mut q), Some(&v), true, &batch, mdp.gamma, 0.05, &mut rng).expect("finite");
        iql_v_step(&mut v, &q, &batch, tau, 0.05, &mut rng).expect("finite");
    }
    let mut worst = 0.0f64;
    for s in 0..ns {
        if mdp.terminal[s] {
            continue;
        }
        for a in 0..na {
            worst = worst.max((q.eval(&onehot(ns * na, s * na + a))[0] - vi.q[s][a]).abs());
        }
    }
    worst
}

pub fn iql_chain(steps: usize) -> Check {
    let err = iql_chain_error(steps, 0.99, 1);
    Check::new("iql_chain", err < 1e-2, format!("tau=0.99, max |Q - Q*| = {err:.2e}"))
}

/// The noise-free default trust environment as a tabular MDP.
pub fn default_mdp() -> Result<(UserEnv, TabularMoEMDP)> {
    let env = UserEnv::new(EnvConfig::noise_free(), Lexicon::shipped())?;
    let mdp = build_tabular(&env, &Intent::ALL)?;
    Ok((env, mdp))
}

/// Transitions from every non-terminal state under every expert. `z_a` is
/// the afterstate `[r, onehot(s')]`, which determines the outcome of the
/// pair the way an encoded post-action history does.
pub fn afterstate_transitions(mdp: &TabularMoEMDP) -> Vec<LatentTransition> {
    let ns = mdp.n_states;
    let mut out = Vec::new();
    for s in 0..ns {
        if mdp.terminal[s] {
            continue;
        }
        for a in 0..mdp.n_actions {
            let s2 = mdp.successor(s, a);
            let mut z_a = vec![mdp.reward[s][a]];
            z_a.extend(onehot(ns, s2));
            out.push(LatentTransition {
                z: onehot(ns, s),
                z_a,
                r: mdp.reward[s][a],
                z_next: onehot(ns, s2),
                terminal: mdp.terminal[s2],
                turn: 0,
                action: Utterance::new(vec![EOS]),
                reply: Utterance::new(vec![EOS]),
                expert: a,
                attribution: Some(a as u8),
                candidates: Vec::new(),
            });
        }
    }
    out
}

fn staged_lr(k: usize, steps: usize, base: f64) -> f64 {
    if k < steps / 2 {
        base
    } else if k < 3 * steps / 4 {
        base * 0.2
    } else {
        base * 0.04
    }
}

const TABULAR_BATCH: usize = 64;
const TABULAR_POLYAK: f64 = 0.05;

/// Train the multi-head critic on the tabular fixture; returns the worst
/// `|V^i - V^i_oracle|` over non-terminal states and experts.
pub fn ftle_head_error(mdp: &TabularMoEMDP, steps: usize, seed: u64) -> f64 {
    let data = afterstate_transitions(mdp);
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let mut rng = stream(seed, &[tag("ftle-tabular")]);
    let mut mh = MultiHeadCritic {
        q: Critic::new(ns + 1, &[], na, 1e-2, None, &mut rng),
        v: Critic::new(ns, &[], na, 1e-2, None, &mut rng),
    };
    for k in 0..steps {
        let lr = staged_lr(k, steps, 1e-2);
        mh.q.opt.config.lr = lr;
        mh.v.opt.config.lr = lr;
        let batch: Vec<&LatentTransition> = (0..TABULAR_BATCH).map(|_| data.choose(&mut rng).expect("data")).collect();
        ftle_step(&mut mh, &batch, mdp.gamma, TABULAR_POLYAK).expect("finite");
    }
    let oracle: Vec<Vec<f64>> = (0..na).map(|i| policy_eval(mdp, i)).collect();
    let mut worst = 0.0f64;
    for s in 0..ns {
        if mdp.terminal[s] {
            continue;
        }
        let v = mh.v.eval(&onehot(ns, s));
        for i in 0..na {
            worst = worst.max((v[i] - oracle[i][s]).abs());
        }
    }
    worst
}

pub fn ftle_heads(steps: usize) -> Result<Check> {
    let (_, mdp) = default_mdp()?;
    let err = ftle_head_error(&mdp, steps, 1);
    Ok(Check::new(
        "ftle_heads",
        err < 5e-2,
        format!("{steps} steps, sup |V^i - V^i_oracle| = {err:.2e}"),
    ))
}

/// Greedy expert choice of a trained Lambda on the tabular fixture and its
/// agreement with value iteration.
pub struct MoevrlOutcome {
    pub policy: Vec<usize>,
    pub agreement: f64,
    pub ret: f64,
    pub optimum: f64,
}

/// `a` is optimal in `s` when it attains the maximum up to rounding.
pub fn is_optimal(q: &[f64], a: usize) -> bool {
    let best = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    q[a] >= best - 1e-9
}

pub fn moevrl_tabular_outcome(mdp: &TabularMoEMDP, steps: usize, seed: u64) -> MoevrlOutcome {
    let data = afterstate_transitions(mdp);
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let mut rng = stream(seed, &[tag("moevrl-tabular")]);
    let mut lam = Critic::new(ns, &[], na, 1e-2, None, &mut rng);
    for k in 0..steps {
        lam.opt.config.lr = staged_lr(k, steps, 1e-2);
        let batch: Vec<&LatentTransition> = (0..TABULAR_BATCH).map(|_| data.choose(&mut rng).expect("data")).collect();
        moevrl_step(&mut lam, &batch, mdp.gamma, TABULAR_POLYAK).expect("finite");
    }
    let vi = value_iteration(mdp, 1e-12);
    let policy: Vec<usize> = (0..ns).map(|s| best_expert(&lam, &onehot(ns, s))).collect();
    let live: Vec<usize> = (0..ns).filter(|&s| !mdp.terminal[s]).collect();
    let hits = live.iter().filter(|&&s| is_optimal(&vi.q[s], policy[s])).count();
    MoevrlOutcome {
        agreement: hits as f64 / live.len() as f64,
        ret: policy_return(mdp, &policy),
        optimum: vi.v[mdp.initial],
        policy,
    }
}

pub fn moevrl_tabular(steps: usize) -> Result<Check> {
    let (_, mdp) = default_mdp()?;
    let o = moevrl_tabular_outcome(&mdp, steps, 1);
    Ok(Check::new(
        "moevrl_tabular",
        o.agreement >= 0.95 && (o.ret - o.optimum).abs() <= 0.05,
        format!(
            "optimal expert on {:.1}% of states, return {:.4} vs V* {:.4}",
            100.0 * o.agreement,
            o.ret,
            o.optimum
        ),
    ))
}

/// SAIQL with every candidate equal to the logged action against IQL.
pub fn saiql_identity(batches: usize) -> Check {
    let mut rng = stream(0, &[tag("saiql-identity")]);
    let (d, m) = (5, 10);
    let q = Critic::new(d, &[16, 16], 1, 1e-3, None, &mut rng);
    let v = Critic::new(d, &[16, 16], 1, 1e-3, None, &mut rng);
    let mut worst = 0.0f64;
    for _ in 0..batches {
        let data: Vec<LatentTransition> = (0..32)
            .map(|_| {
                let mut t = random_transition(d, m, &mut rng);
                t.candidates = vec![t.z_a.clone(); m];
                t
            })
            .collect();
        let batch: Vec<&LatentTransition> = data.iter().collect();
        let tau = rng.random_range(0.05..0.99);
        let (a, ga) = iql_v_loss(&v, &q, &batch, tau, &[]);
        let (b, gb) = saiql_v_loss(&v, &q, &batch, tau, &[]).expect("augmented batch");
        worst = worst.max((a - b).abs());
        for (x, y) in ga.flat().iter().zip(gb.flat()) {
            worst = worst.max((x - y).abs());
        }
    }
    Check::new(
        "saiql_identity",
        worst < 1e-9,
        format!("{batches} batches, worst loss or gradient difference {worst:.2e}"),
    )
}

pub fn histogram_spots() -> Check {
    let uniform = kl_to_uniform(&[0.1; 10]);
    let mut one = vec![0.0; 10];
    one[3] = 1.0;
    let peak = kl_to_uniform(&one);
    let err = (peak - 10f64.ln()).abs();
    Check::new(
        "histogram",
        uniform.abs() < 1e-12 && err < 1e-9,
        format!("uniform {uniform:.1e}, one-hot minus ln 10 {err:.1e}"),
    )
}

/// Exactness of the tabular abstraction and its solvers.
pub fn tabular_exactness() -> Result<Check> {
    let (env, mdp) = default_mdp()?;
    let vi = value_iteration(&mdp, 1e-10);
    let swept = bellman_sweep(&mdp, &vi.v);
    let residual = swept.iter().zip(&vi.v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let vstar = vi.v[mdp.initial];
    let greedy = policy_return(&mdp, &myopic_policy(&mdp));
    let mut dominated = true;
    let mut restricted_err = 0.0f64;
    for i in 0..mdp.n_actions {
        let vi_i = policy_eval(&mdp, i);
        dominated &= vi_i.iter().zip(&vi.v).all(|(a, b)| *a <= b + 1e-9);
        let only_i = TabularMoEMDP {
            n_actions: 1,
            trans: mdp.trans.iter().map(|row| vec![row[i].clone()]).collect(),
            reward: mdp.reward.iter().map(|row| vec![row[i]]).collect(),
            ..mdp.clone()
        };
        let r = value_iteration(&only_i, 1e-12);
        restricted_err = restricted_err.max(r.v.iter().zip(&vi_i).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    let sim = simulate_policy(&env, &mdp, &vi.policy, 7);
    let sim_err = (sim - vstar).abs();
    Ok(Check::new(
        "tabular",
        residual < 1e-10 && vstar - greedy >= 0.5 && dominated && restricted_err < 1e-9 && sim_err < 1e-9,
        format!(
            "residual {residual:.1e}, V* {vstar:.4}, greedy {greedy:.4}, restriction {restricted_err:.1e}, simulated V* error {sim_err:.1e}"
        ),
    ))
}

/// Discounted return of a tabular policy played in the noise-free
/// environment with template utterances carrying the chosen intent.
pub fn simulate_policy(env: &UserEnv, mdp: &TabularMoEMDP, policy: &[usize], seed: u64) -> f64 {
    let mut rng = stream(seed, &[tag("simulate")]);
    let (_, mut state) = env.reset(&mut rng);
    let mut ret = 0.0;
    let mut disc = 1.0;
    loop {
        let s = TabularMoEMDP::state_index(mood_band(state.mood), trust_band(state.trust), state.turn);
        let intent = Intent::ALL[policy[s]];
        let y = gen_template(&env.lex, intent, 0.0, &mut rng);
        let out = env.step(&state, &y, &mut rng);
        ret += disc * out.reward;
        disc *= mdp.gamma;
        if out.done {
            return ret;
        }
        state = out.next;
    }
}

/// Oracle outputs for fixture regeneration.
#[derive(Serialize)]
struct Fixtures<'a> {
    mdp: &'a TabularMoEMDP,
    v_star: &'a [f64],
    q_star: &'a [Vec<f64>],
    policy: &'a [usize],
    greedy_return: f64,
    expert_values: Vec<Vec<f64>>,
    expectiles: Vec<(Vec<f64>, f64, f64)>,
}

pub fn write_fixtures(dir: &Path) -> Result<()> {
    let (_, mdp) = default_mdp()?;
    let vi = value_iteration(&mdp, 1e-10);
    let sample = vec![1.0, 2.0, 4.0];
    let fx = Fixtures {
        mdp: &mdp,
        v_star: &vi.v,
        q_star: &vi.q,
        policy: &vi.policy,
        greedy_return: policy_return(&mdp, &myopic_policy(&mdp)),
        expert_values: (0..mdp.n_actions).map(|i| policy_eval(&mdp, i)).collect(),
        expectiles: EXPECTILE_TAUS.iter().map(|&t| (sample.clone(), t, expectile_bisect(&sample, t))).collect(),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let p = dir.join("oracle.json");
    std::fs::write(&p, serde_json::to_string_pretty(&fx)? + "\n").map_err(|e| Error::io(&p, e))
}

/// Sizes of the suite; the defaults are the acceptance sizes.
#[derive(Clone, Copy, Debug)]
pub struct SuiteSize {
    pub grad_seeds: u64,
    pub expectile_samples: usize,
    pub chain_steps: usize,
    pub tabular_steps: usize,
    pub identity_batches: usize,
}

impl Default for SuiteSize {
    fn default() -> Self {
        SuiteSize {
            grad_seeds: 100,
            expectile_samples: 200,
            chain_steps: 20_000,
            tabular_steps: 20_000,
            identity_batches: 100,
        }
    }
}

pub fn run_suite(size: SuiteSize) -> Result<Vec<Check>> {
    Ok(vec![
        tabular_exactness()?,
        gradient_suite(size.grad_seeds),
        expectile_suite(size.expectile_samples, 0),
        iql_chain(size.chain_steps),
        ftle_heads(size.tabular_steps)?,
        moevrl_tabular(size.tabular_steps)?,
        saiql_identity(size.identity_batches),
        histogram_spots(),
    ])
}
