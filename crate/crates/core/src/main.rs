use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use moedm::eval_report::EvalMode;
use moedm::pipeline::verify::{run_suite, write_fixtures, SuiteSize};
use moedm::pipeline::{ExperimentConfig, Pipeline, RunDir};
use moedm::rl_suite::Algo;
use moedm::Error;

/// Environment variable that relocates the runs directory.
const RUNS_ENV: &str = "MOEDM_RUNS_DIR";

#[derive(Parser)]
#[command(name = "moedm", version, about = "Offline RL dialogue management over a mixture-of-experts latent LM")]
struct Cli {
    /// TOML experiment config; defaults to runs/<name>/config.toml when it
    /// exists, else built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run name (directory under the runs root).
    #[arg(long, global = true)]
    name: Option<String>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for rollouts and dataset passes.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Accept upstream artifacts whose config hash differs.
    #[arg(long, global = true)]
    force: bool,
    /// Suppress progress messages.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgoArg {
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

impl From<AlgoArg> for Algo {
    fn from(a: AlgoArg) -> Algo {
        match a {
            AlgoArg::Sac => Algo::Sac,
            AlgoArg::Ensq => Algo::Ensq,
            AlgoArg::Klc => Algo::Klc,
            AlgoArg::Iql => Algo::Iql,
            AlgoArg::Saiql => Algo::Saiql,
            AlgoArg::Ftle => Algo::Ftle,
            AlgoArg::Moevrl => Algo::Moevrl,
            AlgoArg::Bc => Algo::Bc,
            AlgoArg::Bandit => Algo::Bandit,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Mf,
    Mb,
}

impl From<ModeArg> for EvalMode {
    fn from(m: ModeArg) -> EvalMode {
        match m {
            ModeArg::Mf => EvalMode::ModelFree,
            ModeArg::Mb => EvalMode::ModelBased,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the human-agent conversation corpus.
    GenData,
    /// Train encoder, decoder, posterior and the primitive expert.
    TrainPrimitive,
    /// Train the intent experts on top of the frozen primitive.
    TrainExperts,
    /// Roll out the behaviour mixture and build the latent dataset.
    Collect,
    /// Train an offline RL method (every configured method when omitted).
    TrainRl {
        #[arg(long, value_enum)]
        algo: Option<AlgoArg>,
    },
    /// Evaluate trained methods; model-based mode trains and caches the user model.
    Evaluate {
        #[arg(long, value_enum)]
        mode: ModeArg,
        #[arg(long, value_enum)]
        algo: Option<AlgoArg>,
    },
    /// Aggregate evaluation rows into report.json, results.csv and table.csv.
    Report,
    /// Run the oracle suite; exits with status 2 on any failure.
    Verify {
        /// Dump oracle outputs to runs/<name>/fixtures.
        #[arg(long)]
        write_fixtures: bool,
        /// Smaller sweep sizes for a fast smoke check.
        #[arg(long)]
        quick: bool,
    },
    /// Every stage from gen-data to report.
    All,
    /// Print the resolved configuration as TOML.
    ShowConfig,
}

fn runs_root() -> PathBuf {
    std::env::var_os(RUNS_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"))
}

fn resolve_config(cli: &Cli, runs: &Path) -> moedm::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => {
            let name = cli.name.clone().unwrap_or_else(|| ExperimentConfig::default().name);
            let saved = RunDir::new(runs, &name).config();
            if saved.exists() {
                ExperimentConfig::load(&saved)?
            } else {
                ExperimentConfig::default()
            }
        }
    };
    if let Some(n) = &cli.name {
        cfg.name = n.clone();
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> moedm::Result<()> {
    let runs = runs_root();
    let cfg = resolve_config(cli, &runs)?;
    if let Cmd::ShowConfig = cli.cmd {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let workers = cli.workers.unwrap_or_else(moedm::par::default_workers);
    let mut p = Pipeline::new(cfg, &runs, workers, cli.force)?;
    p.quiet = cli.quiet;
    let methods = |a: Option<AlgoArg>| match a {
        Some(a) => vec![Algo::from(a)],
        None => p.cfg.methods.clone(),
    };
    match &cli.cmd {
        Cmd::GenData => p.gen_data(),
        Cmd::TrainPrimitive => p.train_primitive().map(|_| ()),
        Cmd::TrainExperts => p.train_experts().map(|_| ()),
        Cmd::Collect => p.collect().map(|_| ()),
        Cmd::TrainRl { algo } => {
            for a in methods(*algo) {
                p.train_rl(a)?;
            }
            Ok(())
        }
        Cmd::Evaluate { mode, algo } => {
            for a in methods(*algo) {
                p.evaluate(a, (*mode).into())?;
            }
            Ok(())
        }
        Cmd::Report => {
            let r = p.report()?;
            print!("{}", r.table_csv());
            Ok(())
        }
        Cmd::Verify { write_fixtures: fx, quick } => {
            let size = if *quick {
                SuiteSize {
                    grad_seeds: 5,
                    expectile_samples: 20,
                    chain_steps: 20_000,
                    tabular_steps: 20_000,
                    identity_batches: 10,
                }
            } else {
                SuiteSize::default()
            };
            let checks = run_suite(size)?;
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            if *fx {
                write_fixtures(&p.run.fixtures())?;
            }
            let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
            if failed.is_empty() {
                Ok(())
            } else {
                Err(Error::Verification(failed.join(", ")))
            }
        }
        Cmd::All => {
            let r = p.run_all()?;
            print!("{}", r.table_csv());
            Ok(())
        }
        Cmd::ShowConfig => unreachable!("handled above"),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Verification(_) => 2,
        Error::MissingPrerequisite { .. } => 3,
        Error::Config(_) | Error::ConfigMismatch { .. } => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 4 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
