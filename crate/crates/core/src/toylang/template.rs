use rand::Rng as _;

use super::{Intent, Lexicon, TokenId, Utterance, EOS, QMARK};
use crate::rng::Rng;

/// Number of content words in a template utterance. Together with the
/// marker this makes five scored tokens, so the expected score of a
/// template equals its level.
const CONTENT: usize = 4;

/// Draw the sentiment level an intent's templates are produced at.
pub fn sample_level(intent: Intent, rng: &mut Rng) -> f64 {
    let (lo, hi) = match intent {
        Intent::Cheerfulness => (0.6, 1.0),
        Intent::Optimism => (0.3, 0.8),
        Intent::Contentment => (0.1, 0.5),
        Intent::Dejection => (-0.5, -0.1),
        Intent::Sorrow => (-0.8, -0.3),
        Intent::Rage => (-1.0, -0.6),
        Intent::Empathy => (-0.3, 0.1),
        Intent::Primitive | Intent::Questioning | Intent::Exploration => (-0.2, 0.2),
    };
    rng.random_range(lo..hi)
}

/// `[marker, c1..c4, ('?'), EOS]`. Each content valence is the stochastic
/// rounding of `1.25 * level` onto the half-unit grid, so the expected
/// score is `level` for |level| <= 0.8 and monotone everywhere.
pub fn gen_template(lex: &Lexicon, intent: Intent, level: f64, rng: &mut Rng) -> Utterance {
    let marker = lex.markers(intent)[rng.random_range(0..lex.markers(intent).len())];
    gen_template_with(lex, intent, marker, level, rng)
}

pub fn gen_template_with(lex: &Lexicon, intent: Intent, marker: TokenId, level: f64, rng: &mut Rng) -> Utterance {
    let target = (1.25 * level.clamp(-1.0, 1.0)).clamp(-1.0, 1.0);
    // grid index in 0..=4 for -1, -0.5, 0, 0.5, 1
    let pos = (target + 1.0) * 2.0;
    let lo = (pos.floor() as usize).min(4);
    let frac = pos - lo as f64;
    let mut tokens = vec![marker];
    for _ in 0..CONTENT {
        let k = if frac > 0.0 && rng.random::<f64>() < frac { lo + 1 } else { lo };
        let pool = lex.level_tokens(k);
        tokens.push(pool[rng.random_range(0..pool.len())]);
    }
    if intent == Intent::Questioning {
        tokens.push(QMARK);
    }
    tokens.push(EOS);
    Utterance::new(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn questioning_ends_with_question_mark() {
        let lex = Lexicon::shipped();
        let mut rng = stream(1, &[]);
        for _ in 0..50 {
            let u = gen_template(&lex, Intent::Questioning, 0.0, &mut rng);
            let n = u.tokens.len();
            assert_eq!(u.tokens[n - 1], EOS);
            assert!(lex.is_question(u.tokens[n - 2]));
        }
    }

    #[test]
    fn max_level_cheer_uses_only_positive_content() {
        let lex = Lexicon::shipped();
        let mut rng = stream(2, &[]);
        for _ in 0..50 {
            let u = gen_template(&lex, Intent::Cheerfulness, 1.0, &mut rng);
            for &t in &u.tokens[1..1 + CONTENT] {
                assert!(lex.valence(t) > 0.0);
            }
        }
    }

    #[test]
    fn level_zero_mean_score_is_zero() {
        let lex = Lexicon::shipped();
        let mut rng = stream(3, &[]);
        let n = 10_000;
        let mean: f64 = (0..n)
            .map(|k| gen_template(&lex, Intent::ALL[k % 10], 0.0, &mut rng))
            .map(|u| lex.sent_score(&u))
            .sum::<f64>()
            / n as f64;
        assert!(mean.abs() <= 0.05);
    }

    #[test]
    fn expected_score_tracks_level() {
        let lex = Lexicon::shipped();
        let mut rng = stream(4, &[]);
        let mut prev = f64::NEG_INFINITY;
        for step in 0..=10 {
            let level = -1.0 + 0.2 * step as f64;
            let n = 4000;
            let mean: f64 = (0..n)
                .map(|_| lex.sent_score(&gen_template(&lex, Intent::Contentment, level, &mut rng)))
                .sum::<f64>()
                / n as f64;
            if level.abs() <= 0.8 + 1e-9 {
                assert!((mean - level).abs() < 0.03, "level {level}: {mean}");
            }
            assert!(mean > prev - 0.02);
            prev = mean;
        }
    }

    #[test]
    fn grid_levels_are_deterministic_in_score() {
        let lex = Lexicon::shipped();
        let mut rng = stream(5, &[]);
        for &level in &[-0.8, -0.4, 0.0, 0.4, 0.8] {
            for _ in 0..20 {
                let u = gen_template(&lex, Intent::Empathy, level, &mut rng);
                assert!((lex.sent_score(&u) - level).abs() < 1e-12);
            }
        }
    }
}
