//! Behaviour data and its latent views.
//!
//! Episodes are collected by a uniform mixture over all experts so every
//! intent is covered, encoded into `(z, z_a, r, z_next)` transitions with
//! the frozen encoder, and optionally augmented with one frozen candidate
//! latent per expert.

mod collect;
mod encode;
mod io;

pub use collect::{collect, BehaviorPolicy, BehaviorSpec, RawEpisode, RawTurn};
pub use encode::{augment, encode_dataset, LatentTransition};
pub use io::{
    dataset_hash, encoder_hash, read_dataset, read_episodes, write_dataset, write_episodes, DataHeader,
    LatentDataset, DATA_FORMAT,
};
