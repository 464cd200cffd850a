//! Evaluation protocols and reporting.
//!
//! DM policies are rolled out against the user simulator with candidates
//! scored either by the agent's own critic (model-free) or by a learned
//! user model plus the agent's value function (model-based). Reports
//! carry mean return with standard error, expert-selection histograms and
//! their KL to uniform, and diversity metrics of the generated utterances.

mod diversity;
mod evaluate;
mod histogram;
mod report;
mod user_model;

pub use diversity::{diversity_block, hoyer_sparsity, singular_values, DiversityBlock};
pub use evaluate::{evaluate, mean_stderr, DmPolicy, EvalAttribution, EvalMode, EvalResult, EvalSettings};
pub use histogram::{expert_histogram_kl, kl_to_uniform};
pub use report::{read_rows, write_report, MethodRow, Report, REPORT_FORMAT};
pub use user_model::{score_model_based, train_user_model, ModelBased, UserModel, UserModelLosses, UserModelRecord};
