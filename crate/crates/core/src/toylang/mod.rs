//! The synthetic dialogue domain.
//!
//! A 64-token vocabulary with intent markers and valenced content words,
//! a template generator, the lexicon sentiment scorer used as the reward,
//! the per-intent label functions and n-gram statistics.

mod corpus;
mod labels;
mod lexicon;
mod metrics;
mod template;

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

pub use corpus::{read_corpus, write_corpus, Conversation};
pub use labels::{intent_label, marker_share, novelty};
pub use lexicon::{Lexicon, TokenEntry, LEXICON_FORMAT};
pub use metrics::gram_ratio;
pub use template::{gen_template, gen_template_with, sample_level};

pub type TokenId = u16;

pub const PAD: TokenId = 0;
pub const SOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const QMARK: TokenId = 3;

/// Maximum utterance length, end-of-sentence token included.
pub const MAX_LEN: usize = 8;
/// Number of most recent utterances kept in a history.
pub const HISTORY_LEN: usize = 4;
pub const N_INTENTS: usize = 10;

#[inline]
pub fn is_special(t: TokenId) -> bool {
    t == PAD || t == SOS || t == EOS
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Intent {
    Primitive,
    Empathy,
    Optimism,
    Cheerfulness,
    Contentment,
    Dejection,
    Rage,
    Sorrow,
    Questioning,
    Exploration,
}

impl Intent {
    pub const ALL: [Intent; N_INTENTS] = [
        Intent::Primitive,
        Intent::Empathy,
        Intent::Optimism,
        Intent::Cheerfulness,
        Intent::Contentment,
        Intent::Dejection,
        Intent::Rage,
        Intent::Sorrow,
        Intent::Questioning,
        Intent::Exploration,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Intent> {
        Intent::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Intent::Primitive => "primitive",
            Intent::Empathy => "empathy",
            Intent::Optimism => "optimism",
            Intent::Cheerfulness => "cheerfulness",
            Intent::Contentment => "contentment",
            Intent::Dejection => "dejection",
            Intent::Rage => "rage",
            Intent::Sorrow => "sorrow",
            Intent::Questioning => "questioning",
            Intent::Exploration => "exploration",
        }
    }
}

/// One utterance: tokens after the implicit start-of-sentence token, with
/// the end-of-sentence token included when it was emitted.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Utterance {
    pub tokens: Vec<TokenId>,
}

impl Utterance {
    pub fn new(tokens: Vec<TokenId>) -> Self {
        Utterance { tokens }
    }

    /// Tokens that carry meaning (everything but PAD/SOS/EOS).
    pub fn content(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.tokens.iter().copied().filter(|&t| !is_special(t))
    }

    /// Fixed-width view padded with PAD, plus a validity mask.
    pub fn padded(&self, width: usize) -> (Vec<TokenId>, Vec<bool>) {
        let mut ids = vec![PAD; width];
        let mut mask = vec![false; width];
        for (k, &t) in self.tokens.iter().take(width).enumerate() {
            ids[k] = t;
            mask[k] = true;
        }
        (ids, mask)
    }

    /// Length, vocabulary range and "PAD only after EOS" checks.
    pub fn is_valid(&self, vocab: usize) -> bool {
        if self.tokens.len() > MAX_LEN || self.tokens.iter().any(|&t| t as usize >= vocab) {
            return false;
        }
        match self.tokens.iter().position(|&t| t == EOS) {
            Some(e) => self.tokens[e + 1..].iter().all(|&t| t == PAD) && !self.tokens[..e].contains(&PAD),
            None => !self.tokens.contains(&PAD),
        }
    }
}

/// The most recent `HISTORY_LEN` utterances in chronological order, plus
/// the agent turn counter.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConversationHistory {
    pub turns: VecDeque<Utterance>,
    pub turn: usize,
}

impl ConversationHistory {
    pub fn new(first: Utterance) -> Self {
        let mut h = ConversationHistory::default();
        h.push(first);
        h
    }

    pub fn push(&mut self, u: Utterance) {
        self.turns.push_back(u);
        while self.turns.len() > HISTORY_LEN {
            self.turns.pop_front();
        }
    }

    /// The history with a candidate agent action appended (turn unchanged).
    pub fn with_action(&self, y: &Utterance) -> ConversationHistory {
        let mut h = self.clone();
        h.push(y.clone());
        h
    }

    pub fn tokens(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.turns.iter().flat_map(|u| u.content())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn history_keeps_latest_four() {
        let mut h = ConversationHistory::new(Utterance::new(vec![40, EOS]));
        for k in 0..6 {
            h.push(Utterance::new(vec![41 + k, EOS]));
        }
        assert_eq!(h.turns.len(), HISTORY_LEN);
        assert_eq!(h.turns[0].tokens[0], 43);
    }

    #[test]
    fn padding_rules() {
        assert!(Utterance::new(vec![40, EOS, PAD]).is_valid(64));
        assert!(!Utterance::new(vec![40, PAD, EOS]).is_valid(64));
        assert!(!Utterance::new(vec![64]).is_valid(64));
        assert!(!Utterance::new(vec![40; 9]).is_valid(64));
    }

    #[test]
    fn intent_indices_round_trip() {
        for (k, i) in Intent::ALL.iter().enumerate() {
            assert_eq!(i.index(), k);
            assert_eq!(Intent::from_index(k), Some(*i));
        }
        assert_eq!(Intent::from_index(10), None);
    }
}
