use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{Activation, Adam, AdamConfig, DenseNet, Grads, NetRecord};
use crate::offline_data::LatentTransition;
use crate::rl_suite::{gate_to_expert, regression_loss, Agent, CandidateView, LossKind, RegTarget, Scorer};
use crate::rng::Rng;

/// Learned user response in latent space: predicted reward `r_hat(z_a)`
/// and predicted next state `z_next_hat(z_a)`.
#[derive(Clone, Debug)]
pub struct UserModel {
    pub reward: DenseNet,
    pub next: DenseNet,
    reward_opt: Adam,
    next_opt: Adam,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UserModelRecord {
    pub reward: NetRecord,
    pub next: NetRecord,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserModelLosses {
    pub reward: f64,
    pub next: f64,
}

impl UserModel {
    pub fn new(d_action: usize, d_state: usize, hidden: &[usize], lr: f64, rng: &mut Rng) -> Self {
        let sizes = |out: usize| {
            let mut s = vec![d_action];
            s.extend_from_slice(hidden);
            s.push(out);
            s
        };
        let reward = DenseNet::new(&sizes(1), Activation::Relu, Activation::Identity, rng);
        let next = DenseNet::new(&sizes(d_state), Activation::Relu, Activation::Identity, rng);
        let cfg = AdamConfig { lr, ..AdamConfig::default() };
        UserModel {
            reward_opt: Adam::new(&reward, cfg),
            next_opt: Adam::new(&next, cfg),
            reward,
            next,
        }
    }

    /// Predicted reward, clamped to the reward range.
    pub fn predict_reward(&self, z_a: &[f64]) -> f64 {
        self.reward.forward(z_a)[0].clamp(-1.0, 1.0)
    }

    pub fn predict_next(&self, z_a: &[f64]) -> Vec<f64> {
        self.next.forward(z_a)
    }

    /// `(r - r_hat)^2` and `|z_next - z_next_hat|^2`, batch means, with
    /// gradients.
    pub fn losses(&self, batch: &[&LatentTransition]) -> ((f64, Grads), (f64, Grads)) {
        let inputs: Vec<&[f64]> = batch.iter().map(|t| t.z_a.as_slice()).collect();
        let rt: Vec<Vec<RegTarget>> = batch.iter().map(|t| vec![RegTarget::new(0, t.r)]).collect();
        let nt: Vec<Vec<RegTarget>> = batch
            .iter()
            .map(|t| t.z_next.iter().enumerate().map(|(k, &v)| RegTarget::new(k, v)).collect())
            .collect();
        (
            regression_loss(&self.reward, &inputs, &rt, LossKind::Squared, None),
            regression_loss(&self.next, &inputs, &nt, LossKind::Squared, None),
        )
    }

    pub fn step(&mut self, batch: &[&LatentTransition]) -> Result<UserModelLosses> {
        let ((lr, gr), (ln, gn)) = self.losses(batch);
        if !(lr.is_finite() && ln.is_finite()) {
            return Err(Error::NonFiniteLoss {
                stage: "user_model",
                detail: format!("reward {lr}, next {ln}"),
            });
        }
        self.reward_opt.step(&mut self.reward, &gr)?;
        self.next_opt.step(&mut self.next, &gn)?;
        Ok(UserModelLosses { reward: lr, next: ln })
    }

    pub fn to_record(&self) -> UserModelRecord {
        UserModelRecord {
            reward: self.reward.to_record(),
            next: self.next.to_record(),
        }
    }

    /// Rebuild for scoring; optimiser state starts fresh.
    pub fn from_record(r: &UserModelRecord, lr: f64) -> Result<Self> {
        let reward = DenseNet::from_record(&r.reward)?;
        let next = DenseNet::from_record(&r.next)?;
        let cfg = AdamConfig { lr, ..AdamConfig::default() };
        Ok(UserModel {
            reward_opt: Adam::new(&reward, cfg),
            next_opt: Adam::new(&next, cfg),
            reward,
            next,
        })
    }
}

/// Train for `steps` minibatches drawn with replacement; returns the last
/// step's losses.
pub fn train_user_model(
    um: &mut UserModel,
    data: &[LatentTransition],
    steps: usize,
    batch: usize,
    rng: &mut Rng,
) -> Result<UserModelLosses> {
    if data.is_empty() {
        return Err(Error::Contract("user model needs a non-empty dataset".into()));
    }
    let mut last = UserModelLosses { reward: f64::NAN, next: f64::NAN };
    for _ in 0..steps {
        let b: Vec<&LatentTransition> = (0..batch).map(|_| &data[rng.random_range(0..data.len())]).collect();
        last = um.step(&b)?;
    }
    Ok(last)
}

/// `r_hat(z_a) + gamma * V(z_next_hat(z_a))`.
pub fn score_model_based(r_hat: f64, gamma: f64, v_next: f64) -> f64 {
    r_hat + gamma * v_next
}

/// Model-based scorer: the user model predicts the reward and next state,
/// the agent's value function supplies the continuation. Methods without a
/// value function fall back to their model-free score.
pub struct ModelBased<'a> {
    pub agent: &'a Agent,
    pub user: &'a UserModel,
}

impl Scorer for ModelBased<'_> {
    fn scores(&self, z: &[f64], cands: &[CandidateView], last_turn: bool) -> Vec<f64> {
        let gamma = self.agent.gamma();
        let mut s: Vec<f64> = cands
            .iter()
            .map(|c| {
                let r = self.user.predict_reward(&c.z_a);
                if last_turn || gamma == 0.0 {
                    return if self.agent.next_value(z, z, c.attribution).is_some() {
                        r
                    } else {
                        self.agent.q_value(z, &c.z_a, c.attribution)
                    };
                }
                let zn = self.user.predict_next(&c.z_a);
                match self.agent.next_value(z, &zn, c.attribution) {
                    Some(v) => score_model_based(r, gamma, v),
                    None => self.agent.q_value(z, &c.z_a, c.attribution),
                }
            })
            .collect();
        gate_to_expert(self.agent.committed_expert(z), cands, &mut s);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_based_arithmetic() {
        assert!((score_model_based(0.5, 0.8, 1.0) - 1.3).abs() < 1e-15);
        assert_eq!(score_model_based(0.25, 0.0, 7.0), 0.25);
    }
}
