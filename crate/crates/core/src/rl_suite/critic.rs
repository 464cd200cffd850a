use serde::{Deserialize, Serialize};

use super::expectile::{expectile_dloss, expectile_loss};
use crate::error::Result;
use crate::numkit::{polyak_update, Activation, Adam, AdamConfig, DenseNet, DropoutMasks, Grads, NetRecord, Params};
use crate::rng::Rng;

/// How a regression residual `u = target - prediction` is penalised.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum LossKind {
    Squared,
    Expectile(f64),
}

impl LossKind {
    pub fn loss(self, u: f64) -> f64 {
        match self {
            LossKind::Squared => u * u,
            LossKind::Expectile(tau) => expectile_loss(u, tau),
        }
    }

    pub fn dloss(self, u: f64) -> f64 {
        match self {
            LossKind::Squared => 2.0 * u,
            LossKind::Expectile(tau) => expectile_dloss(u, tau),
        }
    }
}

/// One supervised value for one output head of a net.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegTarget {
    pub head: usize,
    pub value: f64,
    pub weight: f64,
}

impl RegTarget {
    pub fn new(head: usize, value: f64) -> Self {
        RegTarget { head, value, weight: 1.0 }
    }
}

/// Batch mean over examples of `sum_targets weight * loss(value - net(x)[head])`.
/// Heads without a target receive no gradient from that example.
pub fn regression_loss(
    net: &DenseNet,
    inputs: &[&[f64]],
    targets: &[Vec<RegTarget>],
    kind: LossKind,
    masks: Option<&[DropoutMasks]>,
) -> (f64, Grads) {
    assert_eq!(inputs.len(), targets.len(), "inputs and targets differ in length");
    assert!(!inputs.is_empty(), "empty batch");
    let n = inputs.len() as f64;
    let mut grads = net.zero_grads();
    let mut total = 0.0;
    let tape = net.forward_batch_tape(inputs, masks);
    let adjs: Vec<Vec<f64>> = tape
        .outputs()
        .iter()
        .zip(targets)
        .map(|(out, ts)| {
            let mut adj = vec![0.0; out.len()];
            for t in ts {
                let u = t.value - out[t.head];
                total += t.weight * kind.loss(u);
                adj[t.head] -= t.weight * kind.dloss(u) / n;
            }
            adj
        })
        .collect();
    net.backward_batch(&tape, &adjs, &mut grads);
    (total / n, grads)
}

/// Dropout used by a critic: training-time masks at `rate`, and `ensemble`
/// fresh masks whose elementwise minimum forms bootstrapped targets (one
/// means plain target evaluation).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DropoutSpec {
    pub rate: f64,
    pub ensemble: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticRecord {
    pub net: NetRecord,
    pub target: NetRecord,
    pub opt: Adam,
    pub dropout: Option<DropoutSpec>,
}

/// A value net with its Polyak-averaged target copy and optimiser.
#[derive(Clone, Debug)]
pub struct Critic {
    pub net: DenseNet,
    pub target: DenseNet,
    pub opt: Adam,
    pub dropout: Option<DropoutSpec>,
}

impl Critic {
    pub fn new(n_in: usize, hidden: &[usize], n_out: usize, lr: f64, dropout: Option<DropoutSpec>, rng: &mut Rng) -> Self {
        let mut sizes = vec![n_in];
        sizes.extend_from_slice(hidden);
        sizes.push(n_out);
        let net = DenseNet::new(&sizes, Activation::Relu, Activation::Identity, rng);
        let opt = Adam::new(&net, AdamConfig { lr, ..AdamConfig::default() });
        Critic {
            target: net.clone(),
            net,
            opt,
            dropout,
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.net.forward(x)
    }

    pub fn eval_target(&self, x: &[f64]) -> Vec<f64> {
        self.target.forward(x)
    }

    pub fn eval_target_batch(&self, xs: &[&[f64]]) -> Vec<Vec<f64>> {
        self.target.forward_batch(xs)
    }

    /// Masks for one bootstrapped evaluation; empty when there is no
    /// ensemble.
    pub fn ensemble_masks(&self, rng: &mut Rng) -> Vec<DropoutMasks> {
        match self.dropout {
            Some(d) if d.ensemble > 1 => (0..d.ensemble).map(|_| DropoutMasks::sample(&self.target, d.rate, rng)).collect(),
            _ => Vec::new(),
        }
    }

    /// Target output, as the elementwise minimum over `masks` when given.
    pub fn eval_target_min(&self, x: &[f64], masks: &[DropoutMasks]) -> Vec<f64> {
        if masks.is_empty() {
            return self.target.forward(x);
        }
        let mut out = vec![f64::INFINITY; self.target.out_dim()];
        for m in masks {
            let y = self.target.forward_tape_masked(x, Some(m));
            for (o, v) in out.iter_mut().zip(y.output()) {
                *o = o.min(*v);
            }
        }
        out
    }

    /// Per-example training masks, or `None` without dropout.
    pub fn training_masks(&self, n: usize, rng: &mut Rng) -> Option<Vec<DropoutMasks>> {
        self.dropout
            .map(|d| (0..n).map(|_| DropoutMasks::sample(&self.net, d.rate, rng)).collect())
    }

    /// One optimiser step on the regression loss, then a Polyak update.
    pub fn fit(
        &mut self,
        inputs: &[&[f64]],
        targets: &[Vec<RegTarget>],
        kind: LossKind,
        polyak: f64,
        rng: &mut Rng,
    ) -> Result<f64> {
        let masks = self.training_masks(inputs.len(), rng);
        let (loss, grads) = regression_loss(&self.net, inputs, targets, kind, masks.as_deref());
        self.apply(&grads, polyak)?;
        Ok(loss)
    }

    pub fn apply(&mut self, grads: &Grads, polyak: f64) -> Result<()> {
        self.opt.step(&mut self.net, grads)?;
        polyak_update(&mut self.target, &self.net, polyak);
        Ok(())
    }

    pub fn to_record(&self) -> CriticRecord {
        CriticRecord {
            net: self.net.to_record(),
            target: self.target.to_record(),
            opt: self.opt.clone(),
            dropout: self.dropout,
        }
    }

    pub fn from_record(r: &CriticRecord) -> Result<Self> {
        Ok(Critic {
            net: DenseNet::from_record(&r.net)?,
            target: DenseNet::from_record(&r.target)?,
            opt: r.opt.clone(),
            dropout: r.dropout,
        })
    }
}
