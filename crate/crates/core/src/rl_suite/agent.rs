use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::actor::{latent_head, ActionSource, RegMode};
use super::attribution::AttributionMode;
use super::critic::{Critic, CriticRecord, DropoutSpec};
use super::steps::{
    bandit_step, bc_step, best_expert, ftle_step, iql_v_step, moevrl_step, q_step, sac_actor_step, sac_v_step,
    saiql_v_step, MultiHeadCritic, SoftTargets,
};
use crate::error::{Error, Result};
use crate::numkit::{Adam, AdamConfig, GaussianHead, GaussianHeadRecord, StdBounds};
use crate::offline_data::LatentTransition;
use crate::rng::{stream, tag, Rng};

const SHIPPED_WIRING: &str = include_str!("../../assets/rl_wiring.json");
pub const AGENT_FORMAT: &str = "moedm-agent-v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    Sac,
    Ensq,
    Klc,
    Iql,
    Saiql,
    Ftle,
    Moevrl,
    Bc,
    Bandit,
}

impl Algo {
    pub const ALL: [Algo; 9] = [
        Algo::Sac,
        Algo::Ensq,
        Algo::Klc,
        Algo::Iql,
        Algo::Saiql,
        Algo::Ftle,
        Algo::Moevrl,
        Algo::Bc,
        Algo::Bandit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algo::Sac => "sac",
            Algo::Ensq => "ensq",
            Algo::Klc => "klc",
            Algo::Iql => "iql",
            Algo::Saiql => "saiql",
            Algo::Ftle => "ftle",
            Algo::Moevrl => "moevrl",
            Algo::Bc => "bc",
            Algo::Bandit => "bandit",
        }
    }

    pub fn parse(s: &str) -> Option<Algo> {
        Algo::ALL.into_iter().find(|a| a.name() == s)
    }

    pub fn needs_attribution(self) -> bool {
        matches!(self, Algo::Ftle | Algo::Moevrl)
    }

    pub fn needs_candidates(self) -> bool {
        self == Algo::Saiql
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QStructure {
    Single,
    Dual,
    Ensemble,
}

/// One row of the critic wiring table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Wiring {
    pub q: QStructure,
    pub dropout_q: bool,
    pub target_v: bool,
    pub target_q: bool,
    pub learn_policy: bool,
    pub regularizer: RegMode,
}

#[derive(Deserialize)]
struct WiringFile {
    format: String,
    #[allow(dead_code)]
    columns: Vec<String>,
    methods: BTreeMap<String, Wiring>,
}

/// Wiring rows for the actor-critic and expectile methods, keyed by name.
pub fn shipped_wiring() -> BTreeMap<String, Wiring> {
    let f: WiringFile = serde_json::from_str(SHIPPED_WIRING).expect("shipped wiring parses");
    assert_eq!(f.format, "moedm-rl-wiring-v1");
    f.methods
}

/// Hyperparameters shared by all trainers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RlConfig {
    pub gamma: f64,
    /// Entropy / KL temperature.
    pub alpha: f64,
    /// Expectile level for IQL and SAIQL.
    pub tau: f64,
    /// Softmax temperature of the DM policy.
    pub beta: f64,
    pub lr: f64,
    pub batch: usize,
    pub steps: usize,
    pub polyak: f64,
    pub hidden: Vec<usize>,
    pub dropout_q: f64,
    pub ensemble_rate: f64,
    pub ensemble_size: usize,
    pub action_source: ActionSource,
    pub attribution: AttributionMode,
    pub log_every: usize,
}

impl Default for RlConfig {
    fn default() -> Self {
        RlConfig {
            gamma: 0.8,
            alpha: 0.01,
            tau: 0.9,
            beta: 50.0,
            lr: 2e-3,
            batch: 256,
            steps: 3000,
            polyak: 0.005,
            hidden: vec![96, 96, 96],
            dropout_q: 0.1,
            ensemble_rate: 0.5,
            ensemble_size: 5,
            action_source: ActionSource::TeacherForced,
            attribution: AttributionMode::Mean,
            log_every: 50,
        }
    }
}

/// A learnable Gaussian over action latents with its optimiser.
#[derive(Clone, Debug)]
pub struct LatentPolicy {
    pub head: GaussianHead,
    pub opt: Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentPolicyRecord {
    pub head: GaussianHeadRecord,
    pub opt: Adam,
}

impl LatentPolicy {
    fn new(d_in: usize, hidden: &[usize], d_out: usize, lr: f64, rng: &mut Rng) -> Self {
        let head = latent_head(d_in, hidden, d_out, StdBounds::default(), rng);
        let opt = Adam::new(&head, AdamConfig { lr, ..AdamConfig::default() });
        LatentPolicy { head, opt }
    }

    fn to_record(&self) -> LatentPolicyRecord {
        LatentPolicyRecord {
            head: self.head.to_record(),
            opt: self.opt.clone(),
        }
    }

    fn from_record(r: &LatentPolicyRecord) -> Result<Self> {
        Ok(LatentPolicy {
            head: GaussianHead::from_record(&r.head)?,
            opt: r.opt.clone(),
        })
    }
}

/// Everything a trainer learns. Which parts exist depends on the method.
#[derive(Clone, Debug)]
pub struct Agent {
    pub algo: Algo,
    pub cfg: RlConfig,
    pub wiring: Option<Wiring>,
    pub d_state: usize,
    pub d_action: usize,
    pub n_experts: usize,
    pub q: Vec<Critic>,
    pub v: Option<Critic>,
    pub actor: Option<LatentPolicy>,
    pub prior: Option<LatentPolicy>,
    pub multi: Option<MultiHeadCritic>,
    pub lambda: Option<Critic>,
    pub steps: u64,
    rng: Rng,
}

/// Loss components of one training step, by name.
pub type Losses = Vec<(&'static str, f64)>;

impl Agent {
    /// Bandit forces `gamma = 0` whatever the config says.
    pub fn new(algo: Algo, mut cfg: RlConfig, d_state: usize, d_action: usize, n_experts: usize, seed: u64) -> Result<Self> {
        if algo == Algo::Bandit {
            cfg.gamma = 0.0;
        }
        if !(0.0..1.0).contains(&cfg.gamma) || cfg.beta <= 0.0 || !(cfg.tau > 0.0 && cfg.tau < 1.0) || cfg.batch == 0 {
            return Err(Error::Config(format!("invalid RL hyperparameters: {cfg:?}")));
        }
        let mut rng = stream(seed, &[tag("agent"), tag(algo.name())]);
        let h = cfg.hidden.clone();
        let mut agent = Agent {
            algo,
            wiring: None,
            d_state,
            d_action,
            n_experts,
            q: Vec::new(),
            v: None,
            actor: None,
            prior: None,
            multi: None,
            lambda: None,
            steps: 0,
            rng: stream(0, &[]),
            cfg,
        };
        let cfg = &agent.cfg;
        match algo {
            Algo::Sac | Algo::Ensq | Algo::Klc | Algo::Iql | Algo::Saiql => {
                let w = shipped_wiring()
                    .remove(algo.name())
                    .ok_or_else(|| Error::Config(format!("no wiring row for {}", algo.name())))?;
                let dropout = match w.q {
                    QStructure::Ensemble => Some(DropoutSpec {
                        rate: cfg.ensemble_rate,
                        ensemble: cfg.ensemble_size,
                    }),
                    _ if w.dropout_q && cfg.dropout_q > 0.0 => Some(DropoutSpec {
                        rate: cfg.dropout_q,
                        ensemble: 1,
                    }),
                    _ => None,
                };
                let n_q = if w.q == QStructure::Dual { 2 } else { 1 };
                agent.q = (0..n_q).map(|_| Critic::new(d_action, &h, 1, cfg.lr, dropout, &mut rng)).collect();
                agent.v = Some(Critic::new(d_state, &h, 1, cfg.lr, None, &mut rng));
                if w.learn_policy {
                    agent.actor = Some(LatentPolicy::new(d_state, &h, d_action, cfg.lr, &mut rng));
                }
                if w.regularizer == RegMode::Kl {
                    agent.prior = Some(LatentPolicy::new(d_state, &h, d_action, cfg.lr, &mut rng));
                }
                agent.wiring = Some(w);
            }
            Algo::Ftle | Algo::Moevrl => {
                agent.multi = Some(MultiHeadCritic {
                    q: Critic::new(d_action, &h, n_experts, cfg.lr, None, &mut rng),
                    v: Critic::new(d_state, &h, n_experts, cfg.lr, None, &mut rng),
                });
                if algo == Algo::Moevrl {
                    agent.lambda = Some(Critic::new(d_state, &h, n_experts, cfg.lr, None, &mut rng));
                }
            }
            Algo::Bc => agent.prior = Some(LatentPolicy::new(d_state, &h, d_action, cfg.lr, &mut rng)),
            Algo::Bandit => agent.q = vec![Critic::new(d_action, &h, 1, cfg.lr, None, &mut rng)],
        }
        agent.rng = rng;
        Ok(agent)
    }

    fn sample_batch<'a>(&mut self, data: &'a [LatentTransition]) -> Vec<&'a LatentTransition> {
        (0..self.cfg.batch).map(|_| &data[self.rng.random_range(0..data.len())]).collect()
    }

    /// One update of every component the method trains.
    pub fn train_step(&mut self, data: &[LatentTransition]) -> Result<Losses> {
        if data.is_empty() {
            return Err(Error::Contract("empty dataset".into()));
        }
        let batch = self.sample_batch(data);
        let cfg = self.cfg.clone();
        let mut out: Losses = Vec::new();
        match self.algo {
            Algo::Sac | Algo::Ensq | Algo::Klc | Algo::Iql | Algo::Saiql => {
                let w = self.wiring.clone().expect("wired method");
                let v = self.v.as_mut().expect("value net");
                out.push(("q", q_step(&mut self.q, Some(v), w.target_v, &batch, cfg.gamma, cfg.polyak, &mut self.rng)?));
                match self.algo {
                    Algo::Iql => out.push(("v", iql_v_step(v, &self.q[0], &batch, cfg.tau, cfg.polyak, &mut self.rng)?)),
                    Algo::Saiql => out.push(("v", saiql_v_step(v, &self.q[0], &batch, cfg.tau, cfg.polyak, &mut self.rng)?)),
                    _ => {
                        if let Some(p) = self.prior.as_mut() {
                            out.push(("bc", bc_step(&mut p.head, &mut p.opt, &batch)?));
                        }
                        let actor = self.actor.as_mut().expect("actor-critic methods learn a policy");
                        let prior = self.prior.as_ref().map(|p| &p.head);
                        let soft = SoftTargets {
                            alpha: cfg.alpha,
                            reg: w.regularizer,
                            source: cfg.action_source,
                            target_q: w.target_q,
                        };
                        out.push(("v", sac_v_step(v, &self.q, &actor.head, prior, &batch, &soft, cfg.polyak, &mut self.rng)?));
                        out.push((
                            "actor",
                            sac_actor_step(&mut actor.head, &mut actor.opt, &self.q, prior, &batch, cfg.alpha, w.regularizer, &mut self.rng)?,
                        ));
                    }
                }
            }
            Algo::Ftle | Algo::Moevrl => {
                let mh = self.multi.as_mut().expect("multi-head critic");
                let l = ftle_step(mh, &batch, cfg.gamma, cfg.polyak)?;
                out.push(("q", l.q));
                out.push(("v", l.v));
                if let Some(lam) = self.lambda.as_mut() {
                    out.push(("lambda", moevrl_step(lam, &batch, cfg.gamma, cfg.polyak)?));
                }
            }
            Algo::Bc => {
                let p = self.prior.as_mut().expect("behaviour prior");
                out.push(("bc", bc_step(&mut p.head, &mut p.opt, &batch)?));
            }
            Algo::Bandit => out.push(("q", bandit_step(&mut self.q[0], &batch, cfg.polyak, &mut self.rng)?)),
        }
        self.steps += 1;
        Ok(out)
    }

    /// Run `cfg.steps` updates. `log` sees the losses every `log_every`
    /// steps and after the last one.
    pub fn train(&mut self, data: &[LatentTransition], mut log: impl FnMut(u64, &Losses)) -> Result<()> {
        if self.algo.needs_attribution() && data.iter().any(|t| t.attribution.is_none()) {
            return Err(Error::Contract(format!("{} needs attributed transitions", self.algo.name())));
        }
        if self.algo.needs_candidates() && data.iter().any(|t| t.candidates.is_empty()) {
            return Err(Error::Contract("saiql needs augmented transitions".into()));
        }
        for k in 0..self.cfg.steps {
            let l = self.train_step(data)?;
            if (k + 1) % self.cfg.log_every.max(1) == 0 || k + 1 == self.cfg.steps {
                log(self.steps, &l);
            }
        }
        Ok(())
    }

    pub fn gamma(&self) -> f64 {
        self.cfg.gamma
    }

    /// Model-free score of a candidate action latent. `attribution` is
    /// `i(z, a)` (only FtLE and MoE-VRL use it).
    pub fn q_value(&self, z: &[f64], z_a: &[f64], attribution: usize) -> f64 {
        match self.algo {
            Algo::Ftle => self.multi.as_ref().expect("critic").q.eval(z_a)[attribution],
            Algo::Moevrl => {
                let i = best_expert(self.lambda.as_ref().expect("lambda"), z);
                self.multi.as_ref().expect("critic").q.eval(z_a)[i]
            }
            Algo::Bc => self.prior.as_ref().expect("prior").head.dist(z).log_prob(z_a),
            _ => self.q.iter().map(|q| q.eval(z_a)[0]).fold(f64::INFINITY, f64::min),
        }
    }

    /// The expert MoE-VRL commits to at `z`; `None` for every other method.
    pub fn committed_expert(&self, z: &[f64]) -> Option<usize> {
        match self.algo {
            Algo::Moevrl => Some(best_expert(self.lambda.as_ref().expect("lambda"), z)),
            _ => None,
        }
    }

    /// The state value a model-based scorer bootstraps from after the
    /// candidate; `None` for BC, which has no value function.
    pub fn next_value(&self, z: &[f64], z_next: &[f64], attribution: usize) -> Option<f64> {
        match self.algo {
            Algo::Ftle => Some(self.multi.as_ref().expect("critic").v.eval(z_next)[attribution]),
            Algo::Moevrl => {
                let i = best_expert(self.lambda.as_ref().expect("lambda"), z);
                Some(self.multi.as_ref().expect("critic").v.eval(z_next)[i])
            }
            Algo::Bc => None,
            Algo::Bandit => Some(0.0),
            _ => Some(self.v.as_ref().expect("value net").eval(z_next)[0]),
        }
    }

    pub fn to_record(&self) -> AgentRecord {
        AgentRecord {
            format: AGENT_FORMAT.into(),
            algo: self.algo,
            cfg: self.cfg.clone(),
            wiring: self.wiring.clone(),
            d_state: self.d_state,
            d_action: self.d_action,
            n_experts: self.n_experts,
            q: self.q.iter().map(|c| c.to_record()).collect(),
            v: self.v.as_ref().map(|c| c.to_record()),
            actor: self.actor.as_ref().map(|p| p.to_record()),
            prior: self.prior.as_ref().map(|p| p.to_record()),
            multi_q: self.multi.as_ref().map(|m| m.q.to_record()),
            multi_v: self.multi.as_ref().map(|m| m.v.to_record()),
            lambda: self.lambda.as_ref().map(|c| c.to_record()),
            steps: self.steps,
            rng: self.rng.clone(),
        }
    }

    pub fn from_record(r: AgentRecord) -> Result<Self> {
        if r.format != AGENT_FORMAT {
            return Err(Error::Format(format!("expected {AGENT_FORMAT}, found {}", r.format)));
        }
        let multi = match (&r.multi_q, &r.multi_v) {
            (Some(q), Some(v)) => Some(MultiHeadCritic {
                q: Critic::from_record(q)?,
                v: Critic::from_record(v)?,
            }),
            (None, None) => None,
            _ => return Err(Error::Format("multi-head critic is half present".into())),
        };
        Ok(Agent {
            algo: r.algo,
            cfg: r.cfg,
            wiring: r.wiring,
            d_state: r.d_state,
            d_action: r.d_action,
            n_experts: r.n_experts,
            q: r.q.iter().map(Critic::from_record).collect::<Result<_>>()?,
            v: r.v.as_ref().map(Critic::from_record).transpose()?,
            actor: r.actor.as_ref().map(LatentPolicy::from_record).transpose()?,
            prior: r.prior.as_ref().map(LatentPolicy::from_record).transpose()?,
            multi,
            lambda: r.lambda.as_ref().map(Critic::from_record).transpose()?,
            steps: r.steps,
            rng: r.rng,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(&self.to_record())?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Agent::from_record(serde_json::from_str(&text)?)
    }
}

/// Checkpoint container: every net with its target and optimiser state,
/// the hyperparameters, the wiring row and the step counter.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AgentRecord {
    pub format: String,
    pub algo: Algo,
    pub cfg: RlConfig,
    pub wiring: Option<Wiring>,
    pub d_state: usize,
    pub d_action: usize,
    pub n_experts: usize,
    pub q: Vec<CriticRecord>,
    pub v: Option<CriticRecord>,
    pub actor: Option<LatentPolicyRecord>,
    pub prior: Option<LatentPolicyRecord>,
    pub multi_q: Option<CriticRecord>,
    pub multi_v: Option<CriticRecord>,
    pub lambda: Option<CriticRecord>,
    pub steps: u64,
    pub rng: Rng,
}
