//! Offline reinforcement learning for dialogue management over a
//! mixture-of-experts latent language model.
//!
//! The crate is organised bottom-up:
//!
//! * [`numkit`] small dense networks, reverse-mode gradients, Adam and
//!   diagonal Gaussians.
//! * [`toylang`] the synthetic dialogue domain (vocabulary, templates,
//!   sentiment reward, intent labels, n-gram metrics).
//! * [`moe_model`] encoder, decoder, posterior and latent experts.
//! * [`user_sim`] the scripted user environment.
//! * [`offline_data`] behaviour data collection and latent datasets.
//! * [`rl_suite`] critics, the offline RL trainers and DM policies.
//! * [`eval_report`] evaluation protocols, histograms and diversity metrics.
//! * [`oracle`] tabular ground truth used by the verification suite.
//! * [`pipeline`] configuration, run layout and the end-to-end stages.

pub mod error;
pub mod eval_report;
pub mod moe_model;
pub mod numkit;
pub mod offline_data;
pub mod oracle;
pub mod par;
pub mod pipeline;
pub mod rl_suite;
pub mod rng;
pub mod toylang;
pub mod user_sim;

pub use error::{Error, Result};
