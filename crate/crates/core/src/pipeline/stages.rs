use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::run::{require, up_to_date, write_artifact, RunDir};
use crate::error::{Error, Result};
use crate::eval_report::{
    diversity_block, evaluate, expert_histogram_kl, train_user_model, write_report, EvalMode, MethodRow, ModelBased,
    Report, UserModel, UserModelRecord, REPORT_FORMAT,
};
use crate::moe_model::{
    mean_expert_label, primitive_loss, ExpertTrainer, MoeLm, PrimitiveLosses, PrimitiveTrainer,
};
use crate::numkit::AdamConfig;
use crate::offline_data::{
    augment, collect, encode_dataset, encoder_hash, read_dataset, write_dataset, write_episodes, BehaviorSpec,
    DataHeader, LatentDataset, DATA_FORMAT,
};
use crate::oracle::{build_tabular, myopic_policy, policy_return, value_iteration};
use crate::rl_suite::{attribute_dataset, Agent, Algo, ModelFree, Scorer};
use crate::rng::{mix, stream, tag};
use crate::toylang::{read_corpus, write_corpus, ConversationHistory, Intent, Lexicon, Utterance};
use crate::user_sim::{EnvConfig, Environment, UserEnv};

/// Held-out quality of the primitive LM.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveSummary {
    pub train_pairs: usize,
    pub held_out_pairs: usize,
    pub held_out: PrimitiveLosses,
    pub perplexity: f64,
}

/// Mean intent label of one expert against the primitive on held-out
/// contexts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpertScore {
    pub expert: usize,
    pub intent: String,
    pub own: f64,
    pub primitive: f64,
}

impl ExpertScore {
    pub fn gain(&self) -> f64 {
        self.own - self.primitive
    }
}

/// Contexts used to score experts after training.
const EXPERT_EVAL_CONTEXTS: usize = 200;
const EXPERT_EVAL_SAMPLES: usize = 4;
const PRIMITIVE_LOG_EVERY: usize = 50;

/// One configured run: config, directory and execution knobs.
pub struct Pipeline {
    pub cfg: ExperimentConfig,
    pub run: RunDir,
    pub workers: usize,
    pub force: bool,
    pub quiet: bool,
    lex: Lexicon,
}

fn csv_header(hash: &str, cfg: &ExperimentConfig) -> String {
    format!("# config_hash={hash} revision={} seed={}\n", super::run::revision(), cfg.seed)
}

impl Pipeline {
    pub fn new(cfg: ExperimentConfig, runs: &Path, workers: usize, force: bool) -> Result<Self> {
        cfg.validate()?;
        let run = RunDir::new(runs, &cfg.name);
        run.create()?;
        let p = run.config();
        std::fs::write(&p, cfg.to_toml()).map_err(|e| Error::io(&p, e))?;
        Ok(Pipeline {
            cfg,
            run,
            workers: workers.max(1),
            force,
            quiet: false,
            lex: Lexicon::shipped(),
        })
    }

    fn note(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("[{}] {}", self.cfg.name, msg.as_ref());
        }
    }

    fn seed(&self, stage: &str) -> u64 {
        mix(self.cfg.seed, &[tag(stage)])
    }

    pub fn env(&self) -> Result<UserEnv> {
        UserEnv::new(self.cfg.env.clone(), self.lex.clone())
    }

    pub fn corpus_path(&self) -> PathBuf {
        self.run.data().join("corpus.jsonl")
    }
    pub fn primitive_path(&self) -> PathBuf {
        self.run.models().join("primitive.json")
    }
    pub fn model_path(&self) -> PathBuf {
        self.run.models().join("moe.json")
    }
    pub fn episodes_path(&self) -> PathBuf {
        self.run.data().join("episodes.jsonl")
    }
    pub fn dataset_path(&self) -> PathBuf {
        self.run.data().join("latent.jsonl")
    }
    pub fn agent_path(&self, algo: Algo) -> PathBuf {
        self.run.models().join(format!("agent_{}.json", algo.name()))
    }
    pub fn user_model_path(&self) -> PathBuf {
        self.run.models().join("user_model.json")
    }
    pub fn eval_path(&self, algo: Algo, mode: EvalMode) -> PathBuf {
        self.run.reports().join(format!("eval_{}_{}.json", algo.name(), mode.name()))
    }
    pub fn experts_report_path(&self) -> PathBuf {
        self.run.reports().join("experts.json")
    }

    fn pairs(&self) -> Result<(Vec<(ConversationHistory, Utterance)>, Vec<(ConversationHistory, Utterance)>)> {
        let path = self.corpus_path();
        require(&path, &self.cfg.data_hash(), "gen-data", self.force)?;
        let convs = read_corpus(&path)?;
        let mut pairs: Vec<_> = convs.iter().flat_map(|c| c.pairs()).collect();
        let held = ((pairs.len() as f64) * self.cfg.corpus.held_out).ceil() as usize;
        let held_out = pairs.split_off(pairs.len() - held.min(pairs.len()));
        Ok((pairs, held_out))
    }

    fn load_model(&self) -> Result<MoeLm> {
        let path = self.model_path();
        require(&path, &self.cfg.experts_hash(), "train-experts", self.force)?;
        MoeLm::load(&path)
    }

    /// Human-agent conversations with the scripted user.
    pub fn gen_data(&self) -> Result<()> {
        let t0 = Instant::now();
        let env = self.env()?;
        let mut rng = stream(self.cfg.seed, &[tag("gen-data")]);
        let convs = crate::user_sim::generate_corpus(&env, self.cfg.corpus.conversations, &mut rng);
        let path = self.corpus_path();
        write_corpus(&path, &convs)?;
        super::run::stamp(&path, "gen-data", &self.cfg.data_hash(), &self.cfg)?;
        self.note(format!("gen-data: {} conversations", convs.len()));
        self.run.log_timing("gen-data", t0)
    }

    /// Encoder, decoder, posterior and primitive expert.
    pub fn train_primitive(&self) -> Result<PrimitiveSummary> {
        let t0 = Instant::now();
        let (train, held) = self.pairs()?;
        let pc = &self.cfg.primitive;
        if train.len() < pc.batch {
            return Err(Error::Config(format!("{} training pairs, batch {}", train.len(), pc.batch)));
        }
        let mut model = MoeLm::new(self.cfg.model.clone(), &self.lex, self.seed("model-init"));
        let adam = AdamConfig {
            lr: pc.lr,
            ..AdamConfig::default()
        };
        let mut trainer = PrimitiveTrainer::new(&mut model, pc.kappa, adam);
        let mut rng = stream(self.cfg.seed, &[tag("train-primitive")]);
        let hash = self.cfg.primitive_hash();
        let mut curve = csv_header(&hash, &self.cfg);
        curve.push_str("step,nll,token_nll,kl\n");
        let per_epoch = train.len() / pc.batch;
        let mut idx: Vec<usize> = (0..train.len()).collect();
        for s in 0..pc.steps {
            if s % per_epoch == 0 {
                idx.shuffle(&mut rng);
            }
            let off = (s % per_epoch) * pc.batch;
            let batch: Vec<_> = idx[off..off + pc.batch].iter().map(|&i| train[i].clone()).collect();
            let l = trainer.step(&mut model, &batch, &mut rng)?;
            if (s + 1) % PRIMITIVE_LOG_EVERY == 0 || s + 1 == pc.steps {
                writeln!(curve, "{},{:.6},{:.6},{:.6}", s + 1, l.nll, l.token_nll, l.kl).expect("string write");
            }
        }
        let eval_set = if held.is_empty() { &train } else { &held };
        let eps = vec![vec![0.0; model.latent_dim()]; eval_set.len()];
        let (held_out, _) = primitive_loss(&model, eval_set, &eps, pc.kappa);
        let summary = PrimitiveSummary {
            train_pairs: train.len(),
            held_out_pairs: held.len(),
            held_out,
            perplexity: held_out.token_nll.exp(),
        };
        let path = self.primitive_path();
        model.save(&path)?;
        super::run::stamp(&path, "train-primitive", &hash, &self.cfg)?;
        let rep = self.run.reports();
        write_artifact(&rep.join("primitive_curve.csv"), curve.as_bytes(), "train-primitive", &hash, &self.cfg)?;
        let js = serde_json::to_string_pretty(&summary)? + "\n";
        write_artifact(&rep.join("primitive.json"), js.as_bytes(), "train-primitive", &hash, &self.cfg)?;
        self.note(format!(
            "train-primitive: held-out token nll {:.4}, perplexity {:.3}",
            held_out.token_nll, summary.perplexity
        ));
        self.run.log_timing("train-primitive", t0)?;
        Ok(summary)
    }

    /// Experts 1..=m, each by REINFORCE on its intent label.
    pub fn train_experts(&self) -> Result<Vec<ExpertScore>> {
        let t0 = Instant::now();
        let ppath = self.primitive_path();
        require(&ppath, &self.cfg.primitive_hash(), "train-primitive", self.force)?;
        let mut model = MoeLm::load(&ppath)?;
        model.reset_experts_from_primitive();
        let (train, held) = self.pairs()?;
        let contexts: Vec<&ConversationHistory> = train.iter().map(|p| &p.0).collect();
        let ec = &self.cfg.experts;
        let hash = self.cfg.experts_hash();
        let mut curve = csv_header(&hash, &self.cfg);
        curve.push_str("expert,step,mean_label\n");
        let mut trainer = ExpertTrainer::new(ec.clone(), model.n_experts());
        for i in 1..model.n_experts() {
            let mut rng = stream(self.cfg.seed, &[tag("train-experts"), i as u64]);
            for s in 0..ec.steps {
                let batch: Vec<ConversationHistory> = (0..ec.contexts_per_batch)
                    .map(|_| contexts[rng.random_range(0..contexts.len())].clone())
                    .collect();
                let mean = trainer.step(&mut model, &self.lex, i, &batch, &mut rng)?;
                if (s + 1) % PRIMITIVE_LOG_EVERY == 0 || s + 1 == ec.steps {
                    writeln!(curve, "{i},{},{mean:.6}", s + 1).expect("string write");
                }
            }
        }
        let eval_src = if held.is_empty() { &train } else { &held };
        let ctx: Vec<ConversationHistory> = eval_src.iter().take(EXPERT_EVAL_CONTEXTS).map(|p| p.0.clone()).collect();
        let scores: Vec<ExpertScore> = (1..model.n_experts())
            .map(|i| {
                let intent = model.experts[i].intent;
                let label = |gen: usize| {
                    let mut rng = stream(self.cfg.seed, &[tag("expert-eval"), i as u64, gen as u64]);
                    mean_expert_label(&model, &self.lex, gen, intent, &ctx, EXPERT_EVAL_SAMPLES, ec.temperature, &mut rng)
                };
                ExpertScore {
                    expert: i,
                    intent: intent.name().to_string(),
                    own: label(i),
                    primitive: label(0),
                }
            })
            .collect();
        let path = self.model_path();
        model.save(&path)?;
        super::run::stamp(&path, "train-experts", &hash, &self.cfg)?;
        let rep = self.run.reports();
        write_artifact(&rep.join("experts_curve.csv"), curve.as_bytes(), "train-experts", &hash, &self.cfg)?;
        let js = serde_json::to_string_pretty(&scores)? + "\n";
        write_artifact(&self.experts_report_path(), js.as_bytes(), "train-experts", &hash, &self.cfg)?;
        for s in &scores {
            self.note(format!("expert {} ({}): {:.3} vs primitive {:.3}", s.expert, s.intent, s.own, s.primitive));
        }
        self.run.log_timing("train-experts", t0)?;
        Ok(scores)
    }

    /// Behaviour rollouts, latent encoding, attribution and candidate
    /// augmentation.
    pub fn collect(&self) -> Result<LatentDataset> {
        let t0 = Instant::now();
        let model = self.load_model()?;
        let env = self.env()?;
        let cc = &self.cfg.collect;
        let spec = BehaviorSpec {
            weights: cc.weights.clone().unwrap_or_else(|| vec![1.0; model.n_experts()]),
            temperature: cc.temperature,
        };
        let episodes = collect(&model, &spec, cc.episodes, &env, self.seed("collect"), self.workers);
        let mut transitions = encode_dataset(&episodes, &model, env.horizon());
        attribute_dataset(&mut transitions, &model, cc.attribution, self.seed("attribute"), self.workers);
        if cc.augment {
            augment(
                &mut transitions,
                &episodes,
                &model,
                cc.augment_temperature,
                self.seed("augment"),
                self.workers,
            );
        }
        let ds = LatentDataset {
            header: DataHeader {
                format: DATA_FORMAT.to_string(),
                d: model.latent_dim(),
                m: model.n_experts(),
                phi_hash: encoder_hash(&model),
                count: transitions.len(),
            },
            transitions,
        };
        let hash = self.cfg.collect_hash();
        let ep = self.episodes_path();
        write_episodes(&ep, &episodes)?;
        super::run::stamp(&ep, "collect", &hash, &self.cfg)?;
        let dp = self.dataset_path();
        write_dataset(&dp, &ds)?;
        super::run::stamp(&dp, "collect", &hash, &self.cfg)?;
        let agree = ds.transitions.iter().filter(|t| t.attribution == Some(t.expert as u8)).count() as f64
            / ds.transitions.len().max(1) as f64;
        self.note(format!(
            "collect: {} episodes, {} transitions, attribution matches generator on {:.1}%",
            episodes.len(),
            ds.transitions.len(),
            100.0 * agree
        ));
        self.run.log_timing("collect", t0)?;
        Ok(ds)
    }

    fn load_dataset(&self, model: &MoeLm) -> Result<LatentDataset> {
        let path = self.dataset_path();
        require(&path, &self.cfg.collect_hash(), "collect", self.force)?;
        let ds = read_dataset(&path)?;
        let phi = encoder_hash(model);
        if ds.header.phi_hash != phi && !self.force {
            return Err(Error::ConfigMismatch {
                path,
                expected: phi,
                found: ds.header.phi_hash,
            });
        }
        Ok(ds)
    }

    /// Train one offline RL method on the latent dataset.
    pub fn train_rl(&self, algo: Algo) -> Result<Agent> {
        let t0 = Instant::now();
        let model = self.load_model()?;
        let ds = self.load_dataset(&model)?;
        let d = ds.header.d;
        let seed = mix(self.cfg.seed, &[tag("train-rl"), tag(algo.name())]);
        let mut agent = Agent::new(algo, self.cfg.rl.clone(), d, d, ds.header.m, seed)?;
        let hash = self.cfg.rl_hash(algo);
        let mut curve = csv_header(&hash, &self.cfg);
        let mut named = false;
        agent.train(&ds.transitions, |step, losses| {
            if !named {
                let names: Vec<&str> = losses.iter().map(|(n, _)| *n).collect();
                writeln!(curve, "step,{}", names.join(",")).expect("string write");
                named = true;
            }
            let vals: Vec<String> = losses.iter().map(|(_, v)| format!("{v:.6}")).collect();
            writeln!(curve, "{step},{}", vals.join(",")).expect("string write");
        })?;
        let path = self.agent_path(algo);
        agent.save(&path)?;
        super::run::stamp(&path, "train-rl", &hash, &self.cfg)?;
        let cp = self.run.reports().join(format!("curve_{}.csv", algo.name()));
        write_artifact(&cp, curve.as_bytes(), "train-rl", &hash, &self.cfg)?;
        self.note(format!("train-rl {}: {} steps", algo.name(), agent.steps));
        self.run.log_timing(&format!("train-rl {}", algo.name()), t0)?;
        Ok(agent)
    }

    /// Load the cached user model, training it when absent or stale.
    pub fn user_model(&self, model: &MoeLm) -> Result<UserModel> {
        let path = self.user_model_path();
        let hash = self.cfg.user_model_hash();
        let uc = &self.cfg.user_model;
        if up_to_date(&path, &hash) {
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let rec: UserModelRecord = serde_json::from_str(&text)?;
            return UserModel::from_record(&rec, uc.lr);
        }
        let t0 = Instant::now();
        let ds = self.load_dataset(model)?;
        let d = ds.header.d;
        let mut rng = stream(self.cfg.seed, &[tag("user-model")]);
        let mut um = UserModel::new(d, d, &uc.hidden, uc.lr, &mut rng);
        let last = train_user_model(&mut um, &ds.transitions, uc.steps, uc.batch, &mut rng)?;
        let js = serde_json::to_string(&um.to_record())?;
        write_artifact(&path, js.as_bytes(), "user-model", &hash, &self.cfg)?;
        self.note(format!("user model: reward loss {:.4}, next-state loss {:.4}", last.reward, last.next));
        self.run.log_timing("user-model", t0)?;
        Ok(um)
    }

    /// Evaluate one trained method in one mode and store its report row.
    pub fn evaluate(&self, algo: Algo, mode: EvalMode) -> Result<MethodRow> {
        let t0 = Instant::now();
        let model = self.load_model()?;
        let apath = self.agent_path(algo);
        require(&apath, &self.cfg.rl_hash(algo), "train-rl", self.force)?;
        let agent = Agent::load(&apath)?;
        let env = self.env()?;
        let um = match mode {
            EvalMode::ModelBased => Some(self.user_model(&model)?),
            EvalMode::ModelFree => None,
        };
        let mf = ModelFree(&agent);
        let mb;
        let scorer: &dyn Scorer = match &um {
            Some(user) => {
                mb = ModelBased { agent: &agent, user };
                &mb
            }
            None => &mf,
        };
        let es = &self.cfg.eval;
        let res = evaluate(&model, scorer, agent.cfg.beta, &env, es, self.seed("evaluate"), self.workers);
        let (histogram, kl) = expert_histogram_kl(&res.histogram_counts);
        let row = MethodRow {
            method: algo.name().to_string(),
            mode,
            seed: self.cfg.seed,
            n: res.returns.len(),
            mean: res.mean,
            stderr: res.stderr,
            d: model.latent_dim(),
            m: model.n_experts(),
            histogram_counts: res.histogram_counts.clone(),
            histogram,
            kl_to_uniform: kl,
            diversity: diversity_block(&model, &res.samples),
        };
        let path = self.eval_path(algo, mode);
        let js = serde_json::to_string_pretty(&row)? + "\n";
        write_artifact(&path, js.as_bytes(), "evaluate", &self.cfg.eval_hash(algo, mode), &self.cfg)?;
        self.note(format!(
            "evaluate {} {}: {:.4} +- {:.4}, KL to uniform {:.3}",
            algo.name(),
            mode.name(),
            row.mean,
            row.stderr,
            row.kl_to_uniform
        ));
        self.run.log_timing(&format!("evaluate {} {}", algo.name(), mode.name()), t0)?;
        Ok(row)
    }

    /// `V*` and the greedy return of the noise-free tabular abstraction.
    pub fn reference_values(&self) -> Result<(f64, f64)> {
        let cfg = EnvConfig {
            noise_free: true,
            ..self.cfg.env.clone()
        };
        let env = UserEnv::new(cfg, self.lex.clone())?;
        let mdp = build_tabular(&env, &Intent::ALL)?;
        let vi = value_iteration(&mdp, 1e-10);
        Ok((vi.v[mdp.initial], policy_return(&mdp, &myopic_policy(&mdp))))
    }

    /// Aggregate every configured method and mode into the report files.
    pub fn report(&self) -> Result<Report> {
        let t0 = Instant::now();
        let mut rows = Vec::new();
        for &algo in &self.cfg.methods {
            for &mode in &self.cfg.modes {
                let path = self.eval_path(algo, mode);
                require(&path, &self.cfg.eval_hash(algo, mode), "evaluate", self.force)?;
                let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                rows.push(serde_json::from_str::<MethodRow>(&text)?);
            }
        }
        let (optimum, greedy) = self.reference_values()?;
        let report = Report {
            format: REPORT_FORMAT.to_string(),
            config_hash: self.cfg.hash(),
            revision: super::run::revision(),
            seed: self.cfg.seed,
            optimum: Some(optimum),
            greedy: Some(greedy),
            rows,
        };
        let dir = self.run.reports();
        write_report(&dir, &report)?;
        for f in ["report.json", "results.csv", "table.csv"] {
            super::run::stamp(&dir.join(f), "report", &report.config_hash, &self.cfg)?;
        }
        self.note(format!("report: {} rows in {}", report.rows.len(), dir.display()));
        self.run.log_timing("report", t0)?;
        Ok(report)
    }

    /// Every stage in order.
    pub fn run_all(&self) -> Result<Report> {
        self.gen_data()?;
        self.train_primitive()?;
        self.train_experts()?;
        self.collect()?;
        for &algo in &self.cfg.methods {
            self.train_rl(algo)?;
        }
        for &algo in &self.cfg.methods {
            for &mode in &self.cfg.modes {
                self.evaluate(algo, mode)?;
            }
        }
        self.report()
    }
}
