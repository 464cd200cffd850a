//! Minimal differentiable-function kernel.
//!
//! Dense feed-forward nets with layer-wise reverse-mode gradients, an Adam
//! optimiser, Polyak averaging, and diagonal Gaussian utilities. Every
//! learned approximator in the crate is built from these pieces.

mod adam;
mod dense;
mod gaussian;
mod params;

pub use adam::{Adam, AdamConfig};
pub use dense::{Activation, Dense, DenseNet, DropoutMasks, LayerRecord, NetRecord, Tape, NET_FORMAT};
pub use gaussian::{
    softplus, DiagGaussian, GaussianHead, GaussianHeadRecord, HeadTape, Reparam, StdBounds, LN_2PI,
};
pub use params::{polyak_update, Grads, Params};
