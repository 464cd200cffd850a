use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval_report::{EvalMode, EvalSettings};
use crate::moe_model::{ExpertTrainerConfig, ModelConfig};
use crate::rl_suite::{Algo, AttributionMode, RlConfig};
use crate::user_sim::EnvConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub conversations: usize,
    /// Fraction of (context, reply) pairs held out from primitive training.
    pub held_out: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            conversations: 2000,
            held_out: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrimitiveConfig {
    pub steps: usize,
    pub batch: usize,
    pub kappa: f64,
    pub lr: f64,
}

impl Default for PrimitiveConfig {
    fn default() -> Self {
        PrimitiveConfig {
            steps: 1500,
            batch: 32,
            kappa: 0.1,
            lr: 2e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectConfig {
    pub episodes: usize,
    /// Behaviour mixture over experts; uniform when absent.
    pub weights: Option<Vec<f64>>,
    pub temperature: f64,
    pub augment: bool,
    pub augment_temperature: f64,
    pub attribution: AttributionMode,
}

impl Default for CollectConfig {
    fn default() -> Self {
        CollectConfig {
            episodes: 2000,
            weights: None,
            temperature: 1.0,
            augment: true,
            augment_temperature: 0.7,
            attribution: AttributionMode::Mean,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UserModelConfig {
    pub steps: usize,
    pub batch: usize,
    pub hidden: Vec<usize>,
    pub lr: f64,
}

impl Default for UserModelConfig {
    fn default() -> Self {
        UserModelConfig {
            steps: 3000,
            batch: 256,
            hidden: vec![64, 64],
            lr: 2e-3,
        }
    }
}

/// Everything one run depends on. Each section maps to one stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub methods: Vec<Algo>,
    pub modes: Vec<EvalMode>,
    pub model: ModelConfig,
    pub corpus: CorpusConfig,
    pub primitive: PrimitiveConfig,
    pub experts: ExpertTrainerConfig,
    pub env: EnvConfig,
    pub collect: CollectConfig,
    pub rl: RlConfig,
    pub user_model: UserModelConfig,
    pub eval: EvalSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "default".into(),
            seed: 1,
            methods: Algo::ALL.to_vec(),
            modes: vec![EvalMode::ModelFree, EvalMode::ModelBased],
            model: ModelConfig::default(),
            corpus: CorpusConfig::default(),
            primitive: PrimitiveConfig::default(),
            experts: ExpertTrainerConfig::default(),
            env: EnvConfig::default(),
            collect: CollectConfig::default(),
            rl: RlConfig::default(),
            user_model: UserModelConfig::default(),
            eval: EvalSettings::default(),
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of an upstream hash followed by serialisable parts.
pub fn chain_hash<T: Serialize + ?Sized>(upstream: &str, parts: &T) -> String {
    let mut h = Sha256::new();
    h.update(upstream.as_bytes());
    h.update(serde_json::to_vec(parts).expect("config serialises"));
    hex::encode(h.finalize())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        if self.model.n_experts != crate::toylang::N_INTENTS {
            return Err(Error::Config(format!(
                "the domain defines {} intents, config asks for {} experts",
                crate::toylang::N_INTENTS,
                self.model.n_experts
            )));
        }
        if (self.rl.gamma - self.env.gamma).abs() > 0.0 {
            return Err(Error::Config(format!(
                "rl.gamma ({}) differs from env.gamma ({})",
                self.rl.gamma, self.env.gamma
            )));
        }
        if !(0.0..1.0).contains(&self.corpus.held_out) {
            return Err(Error::Config("corpus.held_out must lie in [0,1)".into()));
        }
        if self.eval.n == 0 || self.eval.k_per_expert == 0 {
            return Err(Error::Config("eval.n and eval.k_per_expert must be positive".into()));
        }
        if let Some(w) = &self.collect.weights {
            if w.len() != self.model.n_experts || w.iter().any(|&x| x < 0.0) || w.iter().sum::<f64>() <= 0.0 {
                return Err(Error::Config("collect.weights must be non-negative, one per expert".into()));
            }
        }
        Ok(())
    }

    /// Hash of the whole configuration.
    pub fn hash(&self) -> String {
        chain_hash("", self)
    }

    pub fn data_hash(&self) -> String {
        chain_hash("gen-data", &(self.seed, &self.corpus, &self.env))
    }

    pub fn primitive_hash(&self) -> String {
        chain_hash(&self.data_hash(), &(&self.model, &self.primitive))
    }

    pub fn experts_hash(&self) -> String {
        chain_hash(&self.primitive_hash(), &self.experts)
    }

    pub fn collect_hash(&self) -> String {
        chain_hash(&self.experts_hash(), &(&self.collect, &self.env))
    }

    pub fn rl_hash(&self, algo: Algo) -> String {
        chain_hash(&self.collect_hash(), &(algo, &self.rl))
    }

    pub fn user_model_hash(&self) -> String {
        chain_hash(&self.collect_hash(), &self.user_model)
    }

    pub fn eval_hash(&self, algo: Algo, mode: EvalMode) -> String {
        let up = match mode {
            EvalMode::ModelFree => self.rl_hash(algo),
            EvalMode::ModelBased => chain_hash(&self.rl_hash(algo), &self.user_model_hash()),
        };
        chain_hash(&up, &(mode, &self.eval, &self.env))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn stage_hashes_follow_their_sections() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.rl.tau = 0.7;
        assert_eq!(a.collect_hash(), b.collect_hash());
        assert_ne!(a.rl_hash(Algo::Iql), b.rl_hash(Algo::Iql));
        b.experts.steps = 10;
        assert_ne!(a.collect_hash(), b.collect_hash());
        assert_eq!(a.primitive_hash(), b.primitive_hash());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml("seed = 3\nbogus = 1\n").is_err());
        let c = ExperimentConfig::from_toml("seed = 3\n[rl]\ntau = 0.8\n").unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.rl.tau, 0.8);
        assert_eq!(c.rl.gamma, 0.8);
    }
}
