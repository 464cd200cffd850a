//! The mixture-of-experts latent language model.
//!
//! An encoder maps a history to a latent `z`, Gaussian experts propose
//! latents `z'` given `z`, and an autoregressive decoder turns `z'` into an
//! utterance. Expert 0 is the primitive prior learnt jointly with the
//! encoder, decoder and posterior by a KL-penalised reconstruction loss;
//! experts 1..=m are then fitted one at a time with REINFORCE on their
//! intent labels while everything else stays frozen.

mod candidates;
mod decoder;
mod encoder;
mod model;
mod train;

pub use candidates::{gen_candidates, Candidate};
pub use decoder::{Decoded, Decoder, DecoderConfig, DecoderRecord};
pub use encoder::{Embedding, Encoder, EncoderRecord, EncoderTape};
pub use model::{gaussian_head, LatentExpert, ModelConfig, ModelRecord, MoeLm, Posterior, MODEL_FORMAT};
pub use train::{
    expert_score_grad, mean_expert_label, primitive_loss, sample_noise, ExpertTrainer, ExpertTrainerConfig, PrimitiveLosses,
    PrimitiveTrainer, PrimitiveView,
};
