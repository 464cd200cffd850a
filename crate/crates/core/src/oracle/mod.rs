//! Brute-force ground truth.
//!
//! An exact tabular abstraction of the noise-free user environment whose
//! actions are expert indices, value iteration and policy evaluation on it,
//! a bisection expectile solver and a central-difference gradient checker.
//! Nothing here shares code with the learners it is used to check.

mod expectile;
mod gradcheck;
mod tabular;
mod vi;

pub use expectile::{expectile_bisect, expectile_residual};
pub use gradcheck::{grad_check, GradCheckReport};
pub use tabular::{build_tabular, TabularMoEMDP};
pub use vi::{
    bellman_sweep, greedy_policy, myopic_policy, policy_eval, policy_eval_fixed, policy_return, value_iteration,
    ViResult,
};
