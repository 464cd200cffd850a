use std::path::Path;

use serde::{Deserialize, Serialize};

use super::decoder::{Decoder, DecoderConfig, DecoderRecord};
use super::encoder::{Embedding, Encoder, EncoderRecord};
use crate::error::{Error, Result};
use crate::numkit::{Activation, DenseNet, GaussianHead, GaussianHeadRecord, StdBounds};
use crate::rng::{stream, tag, Rng};
use crate::toylang::{ConversationHistory, Intent, Lexicon, Utterance, HISTORY_LEN, N_INTENTS};

pub const MODEL_FORMAT: &str = "moedm-model-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub latent_dim: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    pub slots: usize,
    pub max_turns: usize,
    pub n_experts: usize,
    pub std_min: f64,
    pub std_max: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            latent_dim: 16,
            embed_dim: 16,
            hidden: 64,
            slots: HISTORY_LEN,
            max_turns: 6,
            n_experts: N_INTENTS,
            std_min: 1e-3,
            std_max: 5.0,
        }
    }
}

impl ModelConfig {
    pub fn bounds(&self) -> StdBounds {
        StdBounds {
            min: self.std_min,
            max: self.std_max,
        }
    }
}

/// Two `[n_in, hidden, out]` tanh nets for mean and raw scale.
pub fn gaussian_head(n_in: usize, hidden: usize, out: usize, bounds: StdBounds, rng: &mut Rng) -> GaussianHead {
    GaussianHead {
        mean_net: DenseNet::new(&[n_in, hidden, out], Activation::Tanh, Activation::Identity, rng),
        scale_net: DenseNet::new(&[n_in, hidden, out], Activation::Tanh, Activation::Identity, rng),
        bounds,
    }
}

/// `rho(z' | z, Y)`: a Gaussian head over `[z, phi_rho(Y)]` where
/// `phi_rho` is the frozen initial token embedding, mean pooled.
#[derive(Clone, Debug, PartialEq)]
pub struct Posterior {
    pub phi_rho: Embedding,
    pub head: GaussianHead,
}

impl Posterior {
    pub fn input(&self, z: &[f64], y: &Utterance) -> Vec<f64> {
        let mut v = z.to_vec();
        v.extend(self.phi_rho.mean_pool(y));
        v
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentExpert {
    pub index: usize,
    pub intent: Intent,
    pub head: GaussianHead,
    /// Running REINFORCE baseline; unset until the first update.
    pub baseline: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MoeLm {
    pub cfg: ModelConfig,
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub posterior: Posterior,
    pub experts: Vec<LatentExpert>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ExpertRecord {
    index: usize,
    intent: Intent,
    head: GaussianHeadRecord,
    baseline: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    format: String,
    config: ModelConfig,
    intents: Vec<Intent>,
    encoder: EncoderRecord,
    decoder: DecoderRecord,
    phi_rho: Embedding,
    posterior: GaussianHeadRecord,
    experts: Vec<ExpertRecord>,
}

impl MoeLm {
    pub fn new(cfg: ModelConfig, lex: &Lexicon, seed: u64) -> Self {
        let mut rng = stream(seed, &[tag("model-init")]);
        let d = cfg.latent_dim;
        let encoder = Encoder::new(lex, cfg.embed_dim, cfg.hidden, d, cfg.slots, cfg.max_turns, &mut rng);
        let decoder = Decoder::new(DecoderConfig::standard(lex.vocab_size()), d, cfg.hidden, &mut rng);
        let posterior = Posterior {
            phi_rho: encoder.embedding.clone(),
            head: gaussian_head(d + cfg.embed_dim, cfg.hidden, d, cfg.bounds(), &mut rng),
        };
        let prior = gaussian_head(d, cfg.hidden, d, cfg.bounds(), &mut rng);
        let experts = (0..cfg.n_experts)
            .map(|i| LatentExpert {
                index: i,
                intent: Intent::ALL[i % N_INTENTS],
                head: prior.clone(),
                baseline: None,
            })
            .collect();
        MoeLm {
            cfg,
            encoder,
            decoder,
            posterior,
            experts,
        }
    }

    pub fn n_experts(&self) -> usize {
        self.experts.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.cfg.latent_dim
    }

    pub fn encode(&self, x: &ConversationHistory) -> Vec<f64> {
        self.encoder.encode(x)
    }

    /// Restart every non-primitive expert from the primitive's parameters.
    pub fn reset_experts_from_primitive(&mut self) {
        let prior = self.experts[0].head.clone();
        for e in self.experts.iter_mut().skip(1) {
            e.head = prior.clone();
            e.baseline = None;
        }
    }

    pub fn to_record(&self) -> ModelRecord {
        ModelRecord {
            format: MODEL_FORMAT.into(),
            config: self.cfg.clone(),
            intents: self.experts.iter().map(|e| e.intent).collect(),
            encoder: self.encoder.to_record(),
            decoder: self.decoder.to_record(),
            phi_rho: self.posterior.phi_rho.clone(),
            posterior: self.posterior.head.to_record(),
            experts: self
                .experts
                .iter()
                .map(|e| ExpertRecord {
                    index: e.index,
                    intent: e.intent,
                    head: e.head.to_record(),
                    baseline: e.baseline,
                })
                .collect(),
        }
    }

    pub fn from_record(r: ModelRecord) -> Result<Self> {
        if r.format != MODEL_FORMAT {
            return Err(Error::Format(format!("expected {MODEL_FORMAT}, found {}", r.format)));
        }
        let experts = r
            .experts
            .iter()
            .enumerate()
            .map(|(k, e)| {
                if e.index != k {
                    return Err(Error::Format("expert records out of order".into()));
                }
                Ok(LatentExpert {
                    index: e.index,
                    intent: e.intent,
                    head: GaussianHead::from_record(&e.head)?,
                    baseline: e.baseline,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MoeLm {
            encoder: Encoder::from_record(&r.encoder)?,
            decoder: Decoder::from_record(&r.decoder)?,
            posterior: Posterior {
                phi_rho: r.phi_rho,
                head: GaussianHead::from_record(&r.posterior)?,
            },
            cfg: r.config,
            experts,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(&self.to_record())?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        MoeLm::from_record(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toylang::EOS;

    #[test]
    fn encoding_is_deterministic_and_ignores_padding() {
        let lex = Lexicon::shipped();
        let m = MoeLm::new(ModelConfig::default(), &lex, 1);
        let x = ConversationHistory::new(Utterance::new(vec![40, 41, EOS]));
        let padded = ConversationHistory::new(Utterance::new(vec![40, 41, EOS, 0, 0]));
        assert_eq!(m.encode(&x), m.encode(&x));
        assert_eq!(m.encode(&x), m.encode(&padded));
        assert_eq!(m.encode(&x).len(), 16);
    }

    #[test]
    fn container_round_trip() {
        let lex = Lexicon::shipped();
        let m = MoeLm::new(ModelConfig::default(), &lex, 2);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        m.save(&p).unwrap();
        assert_eq!(MoeLm::load(&p).unwrap(), m);
    }
}
