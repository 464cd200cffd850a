use std::collections::HashSet;

use super::{TokenId, Utterance};

/// Distinct n-grams over total n-grams, counted on scored tokens within
/// each utterance. Returns 1 when no utterance is long enough to hold an
/// n-gram.
pub fn gram_ratio(n: usize, utterances: &[Utterance]) -> f64 {
    assert!((1..=3).contains(&n), "gram order must be 1, 2 or 3");
    let mut seen: HashSet<&[TokenId]> = HashSet::new();
    let mut total = 0usize;
    let contents: Vec<Vec<TokenId>> = utterances.iter().map(|u| u.content().collect()).collect();
    for c in &contents {
        for w in c.windows(n) {
            total += 1;
            seen.insert(w);
        }
    }
    if total == 0 {
        1.0
    } else {
        seen.len() as f64 / total as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toylang::EOS;

    #[test]
    fn two_short_utterances() {
        // "a b", "a c"
        let s = [Utterance::new(vec![40, 41, EOS]), Utterance::new(vec![40, 42, EOS])];
        assert_eq!(gram_ratio(1, &s), 0.75);
        assert_eq!(gram_ratio(2, &s), 1.0);
    }

    #[test]
    fn distinct_tokens_give_one() {
        let s = [Utterance::new(vec![40, 41, 42, 43, EOS])];
        assert_eq!(gram_ratio(1, &s), 1.0);
    }
}
