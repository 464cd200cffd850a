use rand::Rng as _;

use super::agent::Agent;
use crate::rng::Rng;

/// A candidate as the DM policy sees it.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateView {
    /// `Phi(X + candidate)`.
    pub z_a: Vec<f64>,
    /// Generating expert.
    pub expert: usize,
    /// `i(z, a)`.
    pub attribution: usize,
}

/// Scores every candidate in the current context. `last_turn` tells
/// scorers that bootstrap from a predicted next state not to.
pub trait Scorer: Sync {
    fn scores(&self, z: &[f64], cands: &[CandidateView], last_turn: bool) -> Vec<f64>;
}

/// Scores candidates with the agent's critic directly.
pub struct ModelFree<'a>(pub &'a Agent);

impl Scorer for ModelFree<'_> {
    fn scores(&self, z: &[f64], cands: &[CandidateView], _last_turn: bool) -> Vec<f64> {
        let mut s: Vec<f64> = cands.iter().map(|c| self.0.q_value(z, &c.z_a, c.attribution)).collect();
        gate_to_expert(self.0.committed_expert(z), cands, &mut s);
        s
    }
}

/// Restrict the choice to candidates attributed to `expert` by setting the
/// other scores to minus infinity. Nothing changes when `expert` is `None`
/// or no candidate is attributed to it.
pub fn gate_to_expert(expert: Option<usize>, cands: &[CandidateView], scores: &mut [f64]) {
    let Some(e) = expert else { return };
    if !cands.iter().any(|c| c.attribution == e) {
        return;
    }
    for (s, c) in scores.iter_mut().zip(cands) {
        if c.attribution != e {
            *s = f64::NEG_INFINITY;
        }
    }
}

/// Softmax over `beta * score`, computed with the max subtracted.
pub fn softmax(scores: &[f64], beta: f64) -> Vec<f64> {
    assert!(beta > 0.0, "beta must be positive");
    assert!(!scores.is_empty(), "no candidates");
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = scores.iter().map(|s| (beta * (s - m)).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// Sample a candidate from `softmax(beta * scores)`; returns its index and
/// the full distribution.
pub fn select_action(scores: &[f64], beta: f64, rng: &mut Rng) -> (usize, Vec<f64>) {
    let p = softmax(scores, beta);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return (i, p);
        }
    }
    let last = p.iter().rposition(|&x| x > 0.0).unwrap_or(p.len() - 1);
    (last, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn view(attribution: usize) -> CandidateView {
        CandidateView {
            z_a: vec![0.0],
            expert: attribution,
            attribution,
        }
    }

    #[test]
    fn gate_keeps_only_the_committed_expert() {
        let cands = [view(0), view(3), view(3), view(5)];
        let mut s = vec![4.0, 1.0, 2.0, 9.0];
        gate_to_expert(Some(3), &cands, &mut s);
        assert_eq!(s, vec![f64::NEG_INFINITY, 1.0, 2.0, f64::NEG_INFINITY]);
        let p = softmax(&s, 1.0);
        assert_eq!(p[0], 0.0);
        assert!((p[1] + p[2] - 1.0).abs() < 1e-15);

        let mut s = vec![4.0, 1.0, 2.0, 9.0];
        gate_to_expert(Some(7), &cands, &mut s);
        assert_eq!(s, vec![4.0, 1.0, 2.0, 9.0]);
        gate_to_expert(None, &cands, &mut s);
        assert_eq!(s, vec![4.0, 1.0, 2.0, 9.0]);
    }

    #[test]
    fn analytic_two_way_split() {
        let p = softmax(&[0.0, 2f64.ln()], 1.0);
        assert!((p[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((p[1] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn equal_scores_are_uniform_and_large_beta_is_argmax() {
        let p = softmax(&[0.3; 4], 7.0);
        assert!(p.iter().all(|&x| (x - 0.25).abs() < 1e-15));
        let mut rng = stream(1, &[]);
        let (i, p) = select_action(&[0.1, 0.5, 0.2], 1e6, &mut rng);
        assert_eq!(i, 1);
        assert!(p[1] >= 1.0 - 1e-6);
    }
}
