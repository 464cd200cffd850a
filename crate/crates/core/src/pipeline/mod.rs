//! Configuration, run layout and the end-to-end stages behind the CLI.
//!
//! Every artifact under `runs/<name>/` gets a `.meta.json` sidecar with the
//! hash of the configuration slice it depends on, chained through its
//! upstream stages, plus the source revision and seed. A stage refuses to
//! read an artifact whose hash disagrees with the current configuration
//! unless forced.

mod config;
mod run;
mod stages;
pub mod verify;

pub use config::{
    chain_hash, sha256_hex, CollectConfig, CorpusConfig, ExperimentConfig, PrimitiveConfig, UserModelConfig,
};
pub use run::{meta_path, read_meta, require, revision, stamp, up_to_date, write_artifact, Meta, RunDir};
pub use stages::{ExpertScore, Pipeline, PrimitiveSummary};
