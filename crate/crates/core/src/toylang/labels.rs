use std::collections::HashSet;

use super::{ConversationHistory, Intent, Lexicon, TokenId, Utterance};

/// Fraction of the utterance's marker tokens that belong to `intent`
/// (zero when it has no markers).
pub fn marker_share(lex: &Lexicon, intent: Intent, y: &Utterance) -> f64 {
    let c = lex.marker_counts(y);
    let total: usize = c.iter().sum();
    if total == 0 {
        0.0
    } else {
        c[intent.index()] as f64 / total as f64
    }
}

/// Fraction of the utterance's scored tokens that never occur in the
/// history. An utterance without scored tokens has novelty 0.
pub fn novelty(x: &ConversationHistory, y: &Utterance) -> f64 {
    let seen: HashSet<TokenId> = x.tokens().collect();
    let (mut fresh, mut n) = (0usize, 0usize);
    for t in y.content() {
        n += 1;
        if !seen.contains(&t) {
            fresh += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        fresh as f64 / n as f64
    }
}

/// The label `l_i(x, y)` in [-1, 1] characterising intent `i`.
///
/// Sentiment intents mix marker share with signed sentiment, empathy
/// rewards its markers with near-neutral sentiment, questioning rewards a
/// question marker minus a small overlap penalty, exploration rewards
/// tokens not seen in the history.
pub fn intent_label(lex: &Lexicon, intent: Intent, x: &ConversationHistory, y: &Utterance) -> f64 {
    let m = marker_share(lex, intent, y);
    let sent = lex.sent_score(y);
    let v = match intent {
        Intent::Primitive => m,
        Intent::Empathy => 0.6 * m + 0.4 * (1.0 - 2.0 * sent.abs()),
        Intent::Optimism | Intent::Cheerfulness | Intent::Contentment => 0.7 * m + 0.3 * sent,
        Intent::Dejection | Intent::Rage | Intent::Sorrow => 0.7 * m - 0.3 * sent,
        Intent::Questioning => {
            let q = if y.content().any(|t| lex.is_question(t)) { 1.0 } else { 0.0 };
            q - 0.1 * (1.0 - novelty(x, y))
        }
        Intent::Exploration => 0.5 * m + 0.5 * (2.0 * novelty(x, y) - 1.0),
    };
    v.clamp(-1.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::toylang::{gen_template, sample_level, EOS};

    fn id(lex: &Lexicon, w: &str) -> TokenId {
        lex.entries.iter().find(|e| e.text == w).unwrap().id
    }

    #[test]
    fn questioning_is_an_indicator_up_to_overlap() {
        let lex = Lexicon::shipped();
        let x = ConversationHistory::new(Utterance::new(vec![id(&lex, "the"), EOS]));
        let q = Utterance::new(vec![id(&lex, "good"), 3, EOS]);
        let plain = Utterance::new(vec![id(&lex, "good"), EOS]);
        assert_eq!(intent_label(&lex, Intent::Questioning, &x, &q), 1.0);
        assert_eq!(intent_label(&lex, Intent::Questioning, &x, &plain), 0.0);
        let echo = Utterance::new(vec![id(&lex, "the"), EOS]);
        assert!((intent_label(&lex, Intent::Questioning, &x, &echo) + 0.1).abs() < 1e-12);
    }

    #[test]
    fn rage_on_all_negative_utterance() {
        // marker 0 and four -1 words: sent = -0.8, label = 0.7 + 0.24
        let lex = Lexicon::shipped();
        let w = id(&lex, "awful");
        let u = Utterance::new(vec![id(&lex, "furious"), w, w, w, w, EOS]);
        let v = intent_label(&lex, Intent::Rage, &ConversationHistory::default(), &u);
        assert!(v >= 0.9);
        assert!((v - 0.94).abs() < 1e-12);
    }

    #[test]
    fn exploration_without_novelty_is_not_positive() {
        let lex = Lexicon::shipped();
        let hist = Utterance::new(vec![id(&lex, "good"), id(&lex, "the"), EOS]);
        let x = ConversationHistory::new(hist.clone());
        assert!(intent_label(&lex, Intent::Exploration, &x, &hist) <= 0.0);
    }

    #[test]
    fn own_templates_score_highest_by_a_margin() {
        let lex = Lexicon::shipped();
        let mut rng = stream(7, &[]);
        let n = 2000;
        let mut mean = [[0.0f64; 10]; 10];
        for src in Intent::ALL {
            for _ in 0..n {
                let ctx_level = rng_level(&mut rng);
                let x = ConversationHistory::new(gen_template(&lex, Intent::Contentment, ctx_level, &mut rng));
                let lvl = sample_level(src, &mut rng);
                let y = gen_template(&lex, src, lvl, &mut rng);
                for lab in Intent::ALL {
                    mean[lab.index()][src.index()] += intent_label(&lex, lab, &x, &y) / n as f64;
                }
            }
        }
        for i in 0..10 {
            for j in 0..10 {
                if i != j {
                    assert!(mean[i][i] - mean[i][j] >= 0.3, "label {i}: own {} vs {j} {}", mean[i][i], mean[i][j]);
                }
            }
        }
    }

    fn rng_level(rng: &mut crate::rng::Rng) -> f64 {
        use rand::Rng as _;
        rng.random_range(-1.0..1.0)
    }
}
