use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::numkit::{Activation, DenseNet, GaussianHead, Grads, Params, StdBounds};
use crate::rng::Rng;

/// Regulariser in the soft value target and actor objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegMode {
    None,
    /// `log G(z'|z)`, the negative entropy estimate.
    Shannon,
    /// `log G(z'|z) - log G0(z'|z)` against the behaviour prior.
    Kl,
}

/// Where the action latent scored by the target Q comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionSource {
    /// The logged action latent `z_a` (no generation).
    TeacherForced,
    /// The actor's own latent `z'`.
    Latent,
}

/// Conditional Gaussian over action latents.
pub fn latent_head(n_in: usize, hidden: &[usize], n_out: usize, bounds: StdBounds, rng: &mut Rng) -> GaussianHead {
    let mut sizes = vec![n_in];
    sizes.extend_from_slice(hidden);
    sizes.push(n_out);
    let mean_net = DenseNet::new(&sizes, Activation::Relu, Activation::Identity, rng);
    let mut scale_net = DenseNet::new(&sizes, Activation::Relu, Activation::Identity, rng);
    // start with a moderate spread
    if let Some(last) = scale_net.layers.last_mut() {
        last.weight.iter_mut().for_each(|w| *w *= 0.1);
        last.bias.iter_mut().for_each(|b| *b = -1.0);
    }
    GaussianHead {
        mean_net,
        scale_net,
        bounds,
    }
}

pub fn standard_normal(d: usize, rng: &mut Rng) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

/// Regulariser value at `x` under `g` (and `prior` in KL mode).
pub fn reg_value(mode: RegMode, g: &GaussianHead, prior: Option<&GaussianHead>, z: &[f64], x: &[f64]) -> f64 {
    match mode {
        RegMode::None => 0.0,
        RegMode::Shannon => g.dist(z).log_prob(x),
        RegMode::Kl => {
            let p = prior.expect("KL regulariser needs a prior");
            g.dist(z).log_prob(x) - p.dist(z).log_prob(x)
        }
    }
}

/// Batch mean of `-Q(z') + alpha * reg(z')` with `z' = mu(z) + sigma(z) eps`.
/// `q` returns the scalar critic value and its input gradient; only the
/// actor receives parameter gradients.
pub fn actor_loss<Q: Fn(&[f64]) -> (f64, Vec<f64>)>(
    actor: &GaussianHead,
    prior: Option<&GaussianHead>,
    q: Q,
    zs: &[&[f64]],
    eps: &[Vec<f64>],
    alpha: f64,
    mode: RegMode,
) -> (f64, Grads) {
    let n = zs.len() as f64;
    let mut grads = actor.zero_grads();
    let mut total = 0.0;
    for (z, e) in zs.iter().zip(eps) {
        let tape = actor.dist_tape(z);
        let r = tape.dist.reparam(e.clone());
        let x = &r.sample;
        let (qv, dq) = q(x);
        let mut loss = -qv;
        let mut adj_x: Vec<f64> = dq.iter().map(|g| -g).collect();
        let mut d_mean = vec![0.0; x.len()];
        let mut d_std = vec![0.0; x.len()];
        if mode != RegMode::None && alpha != 0.0 {
            let lp = tape.dist.log_prob(x);
            let (dm, ds, dx) = tape.dist.log_prob_grads(x);
            let mut reg = lp;
            for k in 0..x.len() {
                adj_x[k] += alpha * dx[k];
                d_mean[k] += alpha * dm[k];
                d_std[k] += alpha * ds[k];
            }
            if mode == RegMode::Kl {
                let p = prior.expect("KL regulariser needs a prior").dist(z);
                reg -= p.log_prob(x);
                let (_, _, dpx) = p.log_prob_grads(x);
                for k in 0..x.len() {
                    adj_x[k] -= alpha * dpx[k];
                }
            }
            loss += alpha * reg;
        }
        for k in 0..x.len() {
            d_mean[k] += adj_x[k];
            d_std[k] += adj_x[k] * e[k];
        }
        total += loss;
        let dm: Vec<f64> = d_mean.iter().map(|v| v / n).collect();
        let ds: Vec<f64> = d_std.iter().map(|v| v / n).collect();
        actor.backward(&tape, &dm, &ds, &mut grads);
    }
    (total / n, grads)
}

/// Batch mean negative log-likelihood of logged action latents.
pub fn bc_loss(head: &GaussianHead, zs: &[&[f64]], targets: &[&[f64]]) -> (f64, Grads) {
    let n = zs.len() as f64;
    let mut grads = head.zero_grads();
    let mut total = 0.0;
    for (z, y) in zs.iter().zip(targets) {
        let tape = head.dist_tape(z);
        total -= tape.dist.log_prob(y);
        let (dm, ds, _) = tape.dist.log_prob_grads(y);
        let dm: Vec<f64> = dm.iter().map(|v| -v / n).collect();
        let ds: Vec<f64> = ds.iter().map(|v| -v / n).collect();
        head.backward(&tape, &dm, &ds, &mut grads);
    }
    (total / n, grads)
}

/// Critic value and input gradient for a single-output net.
pub fn net_value_grad(net: &DenseNet, x: &[f64]) -> (f64, Vec<f64>) {
    let tape = net.forward_tape(x);
    let v = tape.output()[0];
    let mut scratch = net.zero_grads();
    let dx = net.backward(&tape, &[1.0], &mut scratch);
    (v, dx)
}
