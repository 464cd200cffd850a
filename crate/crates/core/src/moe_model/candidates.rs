use serde::{Deserialize, Serialize};

use super::model::MoeLm;
use crate::rng::Rng;
use crate::toylang::{ConversationHistory, Utterance};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub expert: usize,
    pub utterance: Utterance,
    pub latent: Vec<f64>,
    pub logprob: f64,
}

/// `k` candidates from every expert, tagged with their source.
pub fn gen_candidates(
    model: &MoeLm,
    x: &ConversationHistory,
    k: usize,
    temperature: f64,
    rng: &mut Rng,
) -> Vec<Candidate> {
    assert!(k >= 1, "need at least one candidate per expert");
    let z = model.encode(x);
    let mut out = Vec::with_capacity(model.n_experts() * k);
    for e in &model.experts {
        let dist = e.head.dist(&z);
        for _ in 0..k {
            let zp = dist.sample(rng).sample;
            let dec = model.decoder.sample(&zp, temperature, rng);
            out.push(Candidate {
                expert: e.index,
                utterance: dec.utterance,
                latent: zp,
                logprob: dec.logprob,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moe_model::ModelConfig;
    use crate::rng::stream;
    use crate::toylang::{Lexicon, Utterance, EOS};

    #[test]
    fn ten_experts_five_each_is_fifty() {
        let lex = Lexicon::shipped();
        let m = MoeLm::new(ModelConfig::default(), &lex, 1);
        let x = ConversationHistory::new(Utterance::new(vec![40, EOS]));
        let c = gen_candidates(&m, &x, 5, 0.7, &mut stream(1, &[]));
        assert_eq!(c.len(), 50);
        for e in 0..10 {
            assert_eq!(c.iter().filter(|c| c.expert == e).count(), 5);
        }
    }

    #[test]
    fn collapsed_scale_and_greedy_decoding_are_deterministic() {
        let lex = Lexicon::shipped();
        let mut m = MoeLm::new(ModelConfig::default(), &lex, 1);
        for e in m.experts.iter_mut() {
            e.head.scale_net.layers[1].weight.iter_mut().for_each(|w| *w = 0.0);
            e.head.scale_net.layers[1].bias.iter_mut().for_each(|b| *b = -60.0);
        }
        let x = ConversationHistory::new(Utterance::new(vec![40, EOS]));
        let a = gen_candidates(&m, &x, 1, 0.0, &mut stream(1, &[]));
        let b = gen_candidates(&m, &x, 1, 0.0, &mut stream(2, &[]));
        for (p, q) in a.iter().zip(&b) {
            assert_eq!(p.utterance, q.utterance);
            for (u, v) in p.latent.iter().zip(&q.latent) {
                assert!((u - v).abs() < 1e-2);
            }
        }
    }
}
