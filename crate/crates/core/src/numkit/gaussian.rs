use serde::{Deserialize, Serialize};

use super::dense::{DenseNet, NetRecord, Tape};
use super::params::{Grads, Params};
use crate::error::{Error, Result};
use crate::rng::Rng;
use rand_distr::{Distribution, StandardNormal};

/// `ln(2 pi)`.
pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Diagonal Gaussian `N(mean, diag(std^2))`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagGaussian {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// A reparameterised draw `sample = mean + std * eps`.
#[derive(Clone, Debug, PartialEq)]
pub struct Reparam {
    pub sample: Vec<f64>,
    pub eps: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Self {
        assert_eq!(mean.len(), std.len(), "mean/std dimension mismatch");
        DiagGaussian { mean, std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_prob(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.dim(), "log_prob dimension mismatch");
        let mut s = 0.0;
        for i in 0..x.len() {
            let u = (x[i] - self.mean[i]) / self.std[i];
            s += -0.5 * u * u - self.std[i].ln() - 0.5 * LN_2PI;
        }
        s
    }

    /// Gradients of `log_prob(x)` with respect to `(mean, std, x)`.
    pub fn log_prob_grads(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = x.len();
        let mut dm = vec![0.0; n];
        let mut ds = vec![0.0; n];
        let mut dx = vec![0.0; n];
        for i in 0..n {
            let s = self.std[i];
            let d = x[i] - self.mean[i];
            dm[i] = d / (s * s);
            ds[i] = d * d / (s * s * s) - 1.0 / s;
            dx[i] = -dm[i];
        }
        (dm, ds, dx)
    }

    /// `KL(self || other)`.
    pub fn kl(&self, other: &DiagGaussian) -> f64 {
        assert_eq!(self.dim(), other.dim(), "kl dimension mismatch");
        let mut s = 0.0;
        for i in 0..self.dim() {
            let (sp, sq) = (self.std[i], other.std[i]);
            let d = self.mean[i] - other.mean[i];
            s += (sq / sp).ln() + (sp * sp + d * d) / (2.0 * sq * sq) - 0.5;
        }
        s
    }

    /// Gradients of `KL(self || other)` as
    /// `(d mean_p, d std_p, d mean_q, d std_q)`.
    pub fn kl_grads(&self, other: &DiagGaussian) -> [Vec<f64>; 4] {
        let n = self.dim();
        let mut g = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        for i in 0..n {
            let (sp, sq) = (self.std[i], other.std[i]);
            let d = self.mean[i] - other.mean[i];
            let q2 = sq * sq;
            g[0][i] = d / q2;
            g[1][i] = -1.0 / sp + sp / q2;
            g[2][i] = -d / q2;
            g[3][i] = 1.0 / sq - (sp * sp + d * d) / (q2 * sq);
        }
        g
    }

    pub fn sample(&self, rng: &mut Rng) -> Reparam {
        let eps: Vec<f64> = (0..self.dim()).map(|_| StandardNormal.sample(rng)).collect();
        self.reparam(eps)
    }

    pub fn reparam(&self, eps: Vec<f64>) -> Reparam {
        let sample = (0..self.dim())
            .map(|i| self.mean[i] + self.std[i] * eps[i])
            .collect();
        Reparam { sample, eps }
    }
}

/// Positive standard deviation parameterisation
/// `std = min(lo + softplus(raw), hi)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StdBounds {
    pub min: f64,
    pub max: f64,
}

impl Default for StdBounds {
    fn default() -> Self {
        StdBounds { min: 1e-3, max: 5.0 }
    }
}

impl StdBounds {
    pub fn std(&self, raw: f64) -> f64 {
        (self.min + softplus(raw)).min(self.max)
    }

    /// `d std / d raw`; zero where the upper clamp is active.
    pub fn dstd(&self, raw: f64) -> f64 {
        if self.min + softplus(raw) >= self.max {
            0.0
        } else {
            sigmoid(raw)
        }
    }
}

/// Conditional diagonal Gaussian: one net for the mean, one for the raw
/// scale.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianHead {
    pub mean_net: DenseNet,
    pub scale_net: DenseNet,
    pub bounds: StdBounds,
}

/// Cached forward pass of a [`GaussianHead`].
#[derive(Clone, Debug)]
pub struct HeadTape {
    mean: Tape,
    scale: Tape,
    pub dist: DiagGaussian,
}

impl GaussianHead {
    pub fn dist(&self, x: &[f64]) -> DiagGaussian {
        let mean = self.mean_net.forward(x);
        let std = self
            .scale_net
            .forward(x)
            .into_iter()
            .map(|r| self.bounds.std(r))
            .collect();
        DiagGaussian::new(mean, std)
    }

    pub fn dist_tape(&self, x: &[f64]) -> HeadTape {
        let mean = self.mean_net.forward_tape(x);
        let scale = self.scale_net.forward_tape(x);
        let dist = DiagGaussian::new(
            mean.output().to_vec(),
            scale.output().iter().map(|&r| self.bounds.std(r)).collect(),
        );
        HeadTape { mean, scale, dist }
    }

    /// Backpropagate adjoints on the distribution's mean and std. Gradients
    /// land in `grads` (mean-net tensors first); returns the input adjoint.
    pub fn backward(&self, tape: &HeadTape, d_mean: &[f64], d_std: &[f64], grads: &mut Grads) -> Vec<f64> {
        let nm = self.mean_net.layers.len() * 2;
        let mut gs = Grads(grads.0.split_off(nm));
        let mut dx = self.mean_net.backward(&tape.mean, d_mean, grads);
        let d_raw: Vec<f64> = tape
            .scale
            .output()
            .iter()
            .zip(d_std)
            .map(|(&r, &a)| a * self.bounds.dstd(r))
            .collect();
        let dx2 = self.scale_net.backward(&tape.scale, &d_raw, &mut gs);
        for (a, b) in dx.iter_mut().zip(dx2) {
            *a += b;
        }
        grads.0.extend(gs.0);
        dx
    }

    pub fn to_record(&self) -> GaussianHeadRecord {
        GaussianHeadRecord {
            mean: self.mean_net.to_record(),
            scale: self.scale_net.to_record(),
            bounds: self.bounds,
        }
    }

    pub fn from_record(rec: &GaussianHeadRecord) -> Result<Self> {
        let mean_net = DenseNet::from_record(&rec.mean)?;
        let scale_net = DenseNet::from_record(&rec.scale)?;
        if mean_net.in_dim() != scale_net.in_dim() || mean_net.out_dim() != scale_net.out_dim() {
            return Err(Error::Format("gaussian head nets disagree on shape".into()));
        }
        Ok(GaussianHead {
            mean_net,
            scale_net,
            bounds: rec.bounds,
        })
    }
}

impl Params for GaussianHead {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.mean_net.tensors();
        t.extend(self.scale_net.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.mean_net.tensors_mut();
        t.extend(self.scale_net.tensors_mut());
        t
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianHeadRecord {
    pub mean: NetRecord,
    pub scale: NetRecord,
    pub bounds: StdBounds,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::Activation;
    use crate::rng::stream;

    #[test]
    fn standard_normal_log_density_at_origin() {
        let g = DiagGaussian::new(vec![0.0], vec![1.0]);
        assert!((g.log_prob(&[0.0]) + 0.918_938_533_204_672_7).abs() < 1e-15);
    }

    #[test]
    fn kl_of_identical_distributions_is_zero() {
        let g = DiagGaussian::new(vec![0.3, -1.0], vec![0.5, 2.0]);
        assert!(g.kl(&g).abs() < 1e-15);
    }

    #[test]
    fn kl_closed_form_for_unit_shift() {
        let p = DiagGaussian::new(vec![1.0], vec![1.0]);
        let q = DiagGaussian::new(vec![0.0], vec![1.0]);
        assert!((p.kl(&q) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn kl_matches_monte_carlo() {
        let p = DiagGaussian::new(vec![0.2, -0.4], vec![0.7, 1.3]);
        let q = DiagGaussian::new(vec![-0.1, 0.5], vec![1.1, 0.9]);
        let mut rng = stream(17, &[]);
        let n = 200_000;
        let mc: f64 = (0..n)
            .map(|_| {
                let x = p.sample(&mut rng).sample;
                p.log_prob(&x) - q.log_prob(&x)
            })
            .sum::<f64>()
            / n as f64;
        assert!((mc - p.kl(&q)).abs() < 0.01, "{mc} vs {}", p.kl(&q));
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let p = DiagGaussian::new(vec![0.2, -0.4], vec![0.7, 1.3]);
        let q = DiagGaussian::new(vec![-0.1, 0.5], vec![1.1, 0.9]);
        let x = [0.5, 0.1];
        let h = 1e-6;
        let (dm, ds, dx) = p.log_prob_grads(&x);
        let kg = p.kl_grads(&q);
        for i in 0..2 {
            let bump = |v: &Vec<f64>, s: f64| {
                let mut w = v.clone();
                w[i] += s;
                w
            };
            let fd = |f: &dyn Fn(f64) -> f64| (f(h) - f(-h)) / (2.0 * h);
            let n_dm = fd(&|s| DiagGaussian::new(bump(&p.mean, s), p.std.clone()).log_prob(&x));
            let n_ds = fd(&|s| DiagGaussian::new(p.mean.clone(), bump(&p.std, s)).log_prob(&x));
            let n_dx = fd(&|s| p.log_prob(&bump(&x.to_vec(), s)));
            assert!((n_dm - dm[i]).abs() < 1e-6);
            assert!((n_ds - ds[i]).abs() < 1e-6);
            assert!((n_dx - dx[i]).abs() < 1e-6);
            let k0 = fd(&|s| DiagGaussian::new(bump(&p.mean, s), p.std.clone()).kl(&q));
            let k1 = fd(&|s| DiagGaussian::new(p.mean.clone(), bump(&p.std, s)).kl(&q));
            let k2 = fd(&|s| p.kl(&DiagGaussian::new(bump(&q.mean, s), q.std.clone())));
            let k3 = fd(&|s| p.kl(&DiagGaussian::new(q.mean.clone(), bump(&q.std, s))));
            assert!((k0 - kg[0][i]).abs() < 1e-6);
            assert!((k1 - kg[1][i]).abs() < 1e-6);
            assert!((k2 - kg[2][i]).abs() < 1e-6);
            assert!((k3 - kg[3][i]).abs() < 1e-6);
        }
    }

    #[test]
    fn std_bounds_clamp_and_floor() {
        let b = StdBounds::default();
        assert!(b.std(-100.0) >= 1e-3);
        assert_eq!(b.std(100.0), 5.0);
        assert_eq!(b.dstd(100.0), 0.0);
        assert!((b.std(0.0) - (1e-3 + 2f64.ln())).abs() < 1e-15);
    }

    #[test]
    fn head_backward_matches_finite_differences() {
        let mut rng = stream(9, &[]);
        let head = GaussianHead {
            mean_net: DenseNet::new(&[3, 5, 2], Activation::Tanh, Activation::Identity, &mut rng),
            scale_net: DenseNet::new(&[3, 5, 2], Activation::Tanh, Activation::Identity, &mut rng),
            bounds: StdBounds::default(),
        };
        let x = [0.3, -0.2, 0.9];
        let target = [0.1, -0.5];
        let loss = |h: &GaussianHead| -h.dist(&x).log_prob(&target);
        let tape = head.dist_tape(&x);
        let (dm, ds, _) = tape.dist.log_prob_grads(&target);
        let neg = |v: Vec<f64>| v.into_iter().map(|a| -a).collect::<Vec<_>>();
        let mut g = head.zero_grads();
        head.backward(&tape, &neg(dm), &neg(ds), &mut g);
        let a = g.flat();
        let flat = head.flat();
        for i in 0..flat.len() {
            let mut p = head.clone();
            let mut v = flat.clone();
            v[i] += 1e-6;
            p.set_flat(&v);
            let up = loss(&p);
            v[i] -= 2e-6;
            p.set_flat(&v);
            let dn = loss(&p);
            let num = (up - dn) / 2e-6;
            assert!((num - a[i]).abs() < 1e-5 * num.abs().max(1.0), "{i}: {num} vs {}", a[i]);
        }
    }
}
