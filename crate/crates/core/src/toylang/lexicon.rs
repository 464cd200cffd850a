use serde::{Deserialize, Serialize};

use super::{is_special, Intent, TokenId, Utterance, N_INTENTS};
use crate::error::{Error, Result};

pub const LEXICON_FORMAT: &str = "moedm-lexicon-v1";

const SHIPPED: &str = include_str!("../../assets/lexicon.json");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenEntry {
    pub id: TokenId,
    pub text: String,
    pub valence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub markers: Option<Intent>,
}

#[derive(Deserialize)]
struct LexiconFile {
    format: String,
    intents: Vec<Intent>,
    question_markers: Vec<String>,
    tokens: Vec<TokenEntry>,
}

/// Token valences, intent marker sets and question markers.
#[derive(Clone, Debug, PartialEq)]
pub struct Lexicon {
    pub entries: Vec<TokenEntry>,
    valence: Vec<f64>,
    marker_of: Vec<Option<Intent>>,
    markers: Vec<Vec<TokenId>>,
    question: Vec<bool>,
    /// Content tokens grouped by valence level -1, -0.5, 0, 0.5, 1.
    by_level: [Vec<TokenId>; 5],
}

impl Lexicon {
    pub fn shipped() -> Lexicon {
        Lexicon::from_json(SHIPPED).expect("shipped lexicon is valid")
    }

    pub fn from_json(text: &str) -> Result<Lexicon> {
        let file: LexiconFile = serde_json::from_str(text)?;
        if file.format != LEXICON_FORMAT {
            return Err(Error::Format(format!(
                "expected lexicon format {LEXICON_FORMAT}, found {}",
                file.format
            )));
        }
        if file.intents != Intent::ALL {
            return Err(Error::Format("lexicon intent list does not match the fixed intent set".into()));
        }
        let n = file.tokens.len();
        let mut valence = vec![0.0; n];
        let mut marker_of = vec![None; n];
        let mut markers = vec![Vec::new(); N_INTENTS];
        let mut question = vec![false; n];
        let mut by_level: [Vec<TokenId>; 5] = Default::default();
        for (k, e) in file.tokens.iter().enumerate() {
            if e.id as usize != k {
                return Err(Error::Format(format!("token {k} has id {}", e.id)));
            }
            if !(-1.0..=1.0).contains(&e.valence) {
                return Err(Error::Format(format!("token {} valence out of range", e.text)));
            }
            valence[k] = e.valence;
            marker_of[k] = e.markers;
            if let Some(i) = e.markers {
                markers[i.index()].push(e.id);
            } else if !is_special(e.id) && e.text != "?" {
                let slot = match e.valence {
                    v if v == -1.0 => Some(0),
                    v if v == -0.5 => Some(1),
                    v if v == 0.0 => Some(2),
                    v if v == 0.5 => Some(3),
                    v if v == 1.0 => Some(4),
                    _ => None,
                };
                if let Some(s) = slot {
                    by_level[s].push(e.id);
                }
            }
            question[k] = file.question_markers.contains(&e.text);
        }
        if markers.iter().any(|m| m.len() < 3) {
            return Err(Error::Format("every intent needs at least three marker tokens".into()));
        }
        if by_level.iter().any(|l| l.is_empty()) {
            return Err(Error::Format("lexicon lacks a content token for some valence level".into()));
        }
        Ok(Lexicon {
            entries: file.tokens,
            valence,
            marker_of,
            markers,
            question,
            by_level,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.entries.len()
    }

    pub fn valence(&self, t: TokenId) -> f64 {
        self.valence[t as usize]
    }

    pub fn marker_of(&self, t: TokenId) -> Option<Intent> {
        self.marker_of[t as usize]
    }

    pub fn markers(&self, i: Intent) -> &[TokenId] {
        &self.markers[i.index()]
    }

    pub fn is_question(&self, t: TokenId) -> bool {
        self.question[t as usize]
    }

    pub fn text(&self, t: TokenId) -> &str {
        &self.entries[t as usize].text
    }

    /// Content tokens at grid level `k` (0 = -1, 2 = neutral, 4 = +1).
    pub fn level_tokens(&self, k: usize) -> &[TokenId] {
        &self.by_level[k]
    }

    /// Lexicon sentiment score: mean valence of the non-special tokens,
    /// clamped to [-1, 1]; zero when there are none.
    pub fn sent_score(&self, u: &Utterance) -> f64 {
        let (mut s, mut n) = (0.0, 0usize);
        for t in u.content() {
            s += self.valence(t);
            n += 1;
        }
        if n == 0 {
            0.0
        } else {
            (s / n as f64).clamp(-1.0, 1.0)
        }
    }

    /// Marker count per intent.
    pub fn marker_counts(&self, u: &Utterance) -> [usize; N_INTENTS] {
        let mut c = [0; N_INTENTS];
        for t in u.content() {
            if let Some(i) = self.marker_of(t) {
                c[i.index()] += 1;
            }
        }
        c
    }

    /// The intent an utterance expresses: most marker tokens, ties to the
    /// lowest index, no markers at all reads as primitive.
    pub fn infer_intent(&self, u: &Utterance) -> Intent {
        let c = self.marker_counts(u);
        let mut best = 0;
        for k in 1..N_INTENTS {
            if c[k] > c[best] {
                best = k;
            }
        }
        Intent::ALL[best]
    }

    pub fn render(&self, u: &Utterance) -> String {
        u.tokens
            .iter()
            .map(|&t| self.text(t))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toylang::{EOS, PAD};

    fn id(lex: &Lexicon, w: &str) -> TokenId {
        lex.entries.iter().find(|e| e.text == w).unwrap().id
    }

    #[test]
    fn shipped_lexicon_loads() {
        let lex = Lexicon::shipped();
        assert_eq!(lex.vocab_size(), 64);
        for i in Intent::ALL {
            assert_eq!(lex.markers(i).len(), 3);
        }
    }

    #[test]
    fn all_positive_tokens_score_one() {
        let lex = Lexicon::shipped();
        let g = id(&lex, "great");
        assert_eq!(lex.sent_score(&Utterance::new(vec![g, g, EOS])), 1.0);
    }

    #[test]
    fn padding_and_neutral_only_scores_zero() {
        let lex = Lexicon::shipped();
        let the = id(&lex, "the");
        assert_eq!(lex.sent_score(&Utterance::new(vec![the, EOS, PAD, PAD])), 0.0);
        assert_eq!(lex.sent_score(&Utterance::new(vec![EOS])), 0.0);
    }

    #[test]
    fn mixed_valences_average_to_one_sixth() {
        // valences +1, -0.5, 0 looked up from the shipped file
        let lex = Lexicon::shipped();
        let u = Utterance::new(vec![id(&lex, "great"), id(&lex, "bad"), id(&lex, "the"), EOS]);
        assert!((lex.sent_score(&u) - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn intent_inference_prefers_majority_then_lowest_index() {
        let lex = Lexicon::shipped();
        let why = id(&lex, "why");
        let yay = id(&lex, "yay");
        let u = Utterance::new(vec![why, yay, yay, EOS]);
        assert_eq!(lex.infer_intent(&u), Intent::Cheerfulness);
        let tie = Utterance::new(vec![why, yay, EOS]);
        assert_eq!(lex.infer_intent(&tie), Intent::Cheerfulness);
        assert_eq!(lex.infer_intent(&Utterance::new(vec![EOS])), Intent::Primitive);
    }

    #[test]
    fn rejects_bad_format_tag() {
        let text = SHIPPED.replace(LEXICON_FORMAT, "other");
        assert!(Lexicon::from_json(&text).is_err());
    }
}
