//! Offline RL over latent transitions.
//!
//! Critics regress on `(z, z_a, r, z_next)` tuples. The actor-critic family
//! (SAC, EnsQ, KLC) and the expectile family (IQL, SAIQL) learn a single
//! Q/V pair; FtLE learns one Q/V head per expert, and MoE-VRL adds a
//! DQN-style value over expert indices. Every method ends up as a
//! [`Scorer`] that a softmax DM policy uses to pick among expert
//! candidates.

mod actor;
mod agent;
mod attribution;
mod critic;
mod expectile;
mod policy;
mod steps;

pub use actor::{actor_loss, bc_loss, latent_head, net_value_grad, reg_value, standard_normal, ActionSource, RegMode};
pub use agent::{shipped_wiring, Agent, AgentRecord, Algo, Losses, QStructure, RlConfig, Wiring, AGENT_FORMAT};
pub use attribution::{argmax_first, assign_expert, attribute_dataset, expert_loglik, AttributionMode};
pub use critic::{regression_loss, Critic, CriticRecord, DropoutSpec, LossKind, RegTarget};
pub use expectile::{expectile_dloss, expectile_loss, expectile_weight};
pub use policy::{gate_to_expert, select_action, softmax, CandidateView, ModelFree, Scorer};
pub use steps::{
    bandit_step, bc_step, best_expert, ftle_losses, ftle_step, iql_v_loss, iql_v_step, moevrl_loss, moevrl_step, q_min,
    q_step, sac_actor_step, sac_v_step, sac_v_targets, saiql_v_loss, saiql_v_step, td_target, Batch, FtleLosses,
    MultiHeadCritic, SoftTargets,
};
