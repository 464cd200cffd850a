//! Scripted user environment.
//!
//! The user has a hidden mood and trust. The agent's utterance is read
//! through its intent markers, a rule table moves mood and trust, and the
//! user answers with a template whose sentiment tracks the new mood. The
//! reward is the lexicon score of that answer. Trust is the delayed payoff
//! mechanism: upbeat intents only lift the mood once trust is high, so
//! chasing immediate reward is strictly worse than planning.

mod config;
mod corpus;
mod env;

pub use config::{
    mood_band, snap_mood, snap_trust, trust_band, Condition, EnvConfig, Rule, RuleTable, MOOD_BANDS, MOOD_MID,
    RULES_FORMAT, TRUST_BANDS, TRUST_MID,
};
pub use corpus::{generate_corpus, HumanAgent};
pub use env::{
    discounted_return, rollout, Action, AgentPolicy, Environment, Rollout, StepOutcome, TurnRecord, UserEnv,
    UserState,
};
