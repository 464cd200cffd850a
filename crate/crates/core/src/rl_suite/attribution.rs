use serde::{Deserialize, Serialize};

use crate::moe_model::MoeLm;
use crate::offline_data::LatentTransition;
use crate::par::par_map;
use crate::rng::{stream, tag};
use crate::toylang::Utterance;

/// How `i(z, Y)` picks the latent at which each expert scores `Y`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributionMode {
    /// Each expert's mean latent.
    Mean,
    /// Average log-likelihood over `k` latents sampled from each expert.
    Sampled { k: usize },
}

/// Index of the first maximum; NaN never wins.
pub fn argmax_first(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] || xs[best].is_nan() {
            best = i;
        }
    }
    best
}

/// Per-expert log-likelihood of `y` given context latent `z`.
pub fn expert_loglik(model: &MoeLm, z: &[f64], y: &Utterance, mode: AttributionMode, seed: u64) -> Vec<f64> {
    model
        .experts
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let g = e.head.dist(z);
            match mode {
                AttributionMode::Mean => model.decoder.logprob(&g.mean, y),
                AttributionMode::Sampled { k } => {
                    let mut rng = stream(seed, &[tag("attribution"), i as u64]);
                    let k = k.max(1);
                    (0..k).map(|_| model.decoder.logprob(&g.sample(&mut rng).sample, y)).sum::<f64>() / k as f64
                }
            }
        })
        .collect()
}

/// `i(z, Y)`: the expert under which `y` is most likely; ties go to the
/// lowest index.
pub fn assign_expert(model: &MoeLm, z: &[f64], y: &Utterance, mode: AttributionMode, seed: u64) -> usize {
    argmax_first(&expert_loglik(model, z, y, mode, seed))
}

/// Fill `attribution` on every transition. Transition `k` uses stream
/// `(seed, k)` in sampled mode.
pub fn attribute_dataset(transitions: &mut [LatentTransition], model: &MoeLm, mode: AttributionMode, seed: u64, workers: usize) {
    let idx = par_map(workers, transitions.len(), |k| {
        let t = &transitions[k];
        assign_expert(model, &t.z, &t.action, mode, crate::rng::mix(seed, &[k as u64])) as u8
    });
    for (t, i) in transitions.iter_mut().zip(idx) {
        t.attribution = Some(i);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_go_to_lowest_index() {
        assert_eq!(argmax_first(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax_first(&[f64::NAN, -1.0]), 1);
        assert_eq!(argmax_first(&[0.0]), 0);
    }
}
