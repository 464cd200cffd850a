use serde::{Deserialize, Serialize};

use super::collect::RawEpisode;
use crate::moe_model::MoeLm;
use crate::par::par_map;
use crate::rng::{stream, tag};
use crate::toylang::{ConversationHistory, Utterance};

/// `(z, z_a, r, z_next)` plus bookkeeping. `candidates` holds one latent
/// per expert once the dataset has been augmented.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentTransition {
    pub z: Vec<f64>,
    pub z_a: Vec<f64>,
    pub r: f64,
    pub z_next: Vec<f64>,
    pub terminal: bool,
    pub turn: usize,
    pub action: Utterance,
    pub reply: Utterance,
    pub expert: usize,
    pub attribution: Option<u8>,
    pub candidates: Vec<Vec<f64>>,
}

/// The history after the agent said `a` and the user answered.
pub fn next_history(x: &ConversationHistory, a: &Utterance, reply: &Utterance) -> ConversationHistory {
    let mut h = x.with_action(a);
    h.push(reply.clone());
    h.turn += 1;
    h
}

pub fn encode_dataset(episodes: &[RawEpisode], model: &MoeLm, horizon: usize) -> Vec<LatentTransition> {
    let mut out = Vec::new();
    for ep in episodes {
        for t in &ep.turns {
            let next = next_history(&t.context, &t.action, &t.reply);
            out.push(LatentTransition {
                z: model.encode(&t.context),
                z_a: model.encode(&t.context.with_action(&t.action)),
                r: t.reward,
                z_next: model.encode(&next),
                terminal: next.turn >= horizon,
                turn: t.context.turn,
                action: t.action.clone(),
                reply: t.reply.clone(),
                expert: t.expert,
                attribution: None,
                candidates: Vec::new(),
            });
        }
    }
    out
}

/// Decode one candidate per expert for every transition and store
/// `Phi(X + candidate)`. Transition `k` draws from stream `(seed, k)`.
pub fn augment(
    transitions: &mut [LatentTransition],
    episodes: &[RawEpisode],
    model: &MoeLm,
    temperature: f64,
    seed: u64,
    workers: usize,
) {
    let contexts: Vec<&ConversationHistory> = episodes.iter().flat_map(|e| e.turns.iter().map(|t| &t.context)).collect();
    assert_eq!(contexts.len(), transitions.len(), "episodes do not match the dataset");
    let cands = par_map(workers, transitions.len(), |k| {
        let mut rng = stream(seed, &[tag("augment"), k as u64]);
        let x = contexts[k];
        let z = &transitions[k].z;
        model
            .experts
            .iter()
            .map(|e| {
                let zp = e.head.dist(z).sample(&mut rng).sample;
                let y = model.decoder.sample(&zp, temperature, &mut rng).utterance;
                model.encode(&x.with_action(&y))
            })
            .collect::<Vec<_>>()
    });
    for (t, c) in transitions.iter_mut().zip(cands) {
        t.candidates = c;
    }
}
