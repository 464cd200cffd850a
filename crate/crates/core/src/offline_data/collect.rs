use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::moe_model::MoeLm;
use crate::par::par_map;
use crate::rng::{stream, tag, Rng};
use crate::toylang::{ConversationHistory, Utterance};
use crate::user_sim::{rollout, Action, AgentPolicy, UserEnv};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BehaviorSpec {
    /// Mixture weights over experts; normalised on use.
    pub weights: Vec<f64>,
    pub temperature: f64,
}

impl BehaviorSpec {
    pub fn uniform(n_experts: usize) -> Self {
        BehaviorSpec {
            weights: vec![1.0; n_experts],
            temperature: 1.0,
        }
    }
}

/// Picks an expert from the mixture, samples its latent and decodes.
pub struct BehaviorPolicy<'a> {
    pub model: &'a MoeLm,
    pub spec: &'a BehaviorSpec,
}

impl AgentPolicy for BehaviorPolicy<'_> {
    fn act(&mut self, x: &ConversationHistory, rng: &mut Rng) -> Action {
        let total: f64 = self.spec.weights.iter().sum();
        let mut u = rng.random::<f64>() * total;
        let mut k = self.spec.weights.len() - 1;
        for (i, &w) in self.spec.weights.iter().enumerate() {
            if w > 0.0 && u < w {
                k = i;
                break;
            }
            u -= w;
        }
        let z = self.model.encode(x);
        let zp = self.model.experts[k].head.dist(&z).sample(rng).sample;
        let y = self.model.decoder.sample(&zp, self.spec.temperature, rng).utterance;
        Action {
            utterance: y,
            expert: Some(k),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawTurn {
    pub context: ConversationHistory,
    pub action: Utterance,
    pub expert: usize,
    pub reply: Utterance,
    pub reward: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawEpisode {
    pub turns: Vec<RawTurn>,
    pub weights: Vec<f64>,
    pub seed: u64,
}

/// Collect `n` episodes; episode `k` uses its own stream derived from
/// `(seed, k)` so the result is independent of the worker count.
pub fn collect(model: &MoeLm, spec: &BehaviorSpec, n: usize, env: &UserEnv, seed: u64, workers: usize) -> Vec<RawEpisode> {
    par_map(workers, n, |k| {
        let mut rng = stream(seed, &[tag("collect"), k as u64]);
        let mut pol = BehaviorPolicy { model, spec };
        let r = rollout(env, &mut pol, &mut rng);
        RawEpisode {
            turns: r
                .turns
                .into_iter()
                .map(|t| RawTurn {
                    context: t.context,
                    action: t.action,
                    expert: t.expert.unwrap_or(0),
                    reply: t.reply,
                    reward: t.reward,
                })
                .collect(),
            weights: spec.weights.clone(),
            seed,
        }
    })
}
