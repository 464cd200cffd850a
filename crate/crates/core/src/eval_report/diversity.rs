use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::moe_model::MoeLm;
use crate::toylang::{gram_ratio, ConversationHistory, Utterance};

/// Hoyer sparsity `(sqrt(n) - |x|_1 / |x|_2) / (sqrt(n) - 1)`: 0 for a
/// flat vector, 1 for a single nonzero entry.
pub fn hoyer_sparsity(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    assert!(x.len() >= 2, "sparsity needs at least two entries");
    let l1: f64 = x.iter().map(|v| v.abs()).sum();
    let l2 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if l2 == 0.0 {
        return 1.0;
    }
    ((n.sqrt() - l1 / l2) / (n.sqrt() - 1.0)).clamp(0.0, 1.0)
}

/// Singular values of the row-stacked embeddings, largest first.
pub fn singular_values(rows: &[Vec<f64>]) -> Vec<f64> {
    let cols = rows.first().map_or(0, |r| r.len());
    let m = DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]);
    let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiversityBlock {
    /// `1 - Hoyer sparsity` of the embedding singular values.
    pub diversity: f64,
    pub gram1: f64,
    pub gram2: f64,
    pub gram3: f64,
    /// `exp` of the mean per-token NLL under the primitive expert's mean
    /// latent.
    pub perplexity: f64,
}

/// Metrics over generated utterances and the contexts they answered.
pub fn diversity_block(model: &MoeLm, samples: &[(ConversationHistory, Utterance)]) -> DiversityBlock {
    assert!(samples.len() >= 2, "need at least two utterances");
    let utts: Vec<Utterance> = samples.iter().map(|(_, y)| y.clone()).collect();
    let emb: Vec<Vec<f64>> = utts.iter().map(|u| model.encoder.embedding.mean_pool(u)).collect();
    let sv = singular_values(&emb);
    let (mut nll, mut tokens) = (0.0, 0usize);
    for (x, y) in samples {
        let z = model.encode(x);
        let zp = model.experts[0].head.dist(&z).mean;
        nll -= model.decoder.logprob(&zp, y);
        tokens += y.tokens.iter().take_while(|&&t| t != crate::toylang::PAD).count();
    }
    DiversityBlock {
        diversity: 1.0 - hoyer_sparsity(&sv),
        gram1: gram_ratio(1, &utts),
        gram2: gram_ratio(2, &utts),
        gram3: gram_ratio(3, &utts),
        perplexity: (nll / tokens.max(1) as f64).exp(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extreme_cases() {
        let same = vec![vec![1.0, 2.0, 0.5]; 4];
        let sv = singular_values(&same);
        assert!(sv[1..].iter().all(|&s| s < 1e-12));
        assert!((hoyer_sparsity(&sv) - 1.0).abs() < 1e-9);
        let eye: Vec<Vec<f64>> = (0..3).map(|i| (0..3).map(|j| if i == j { 2.0 } else { 0.0 }).collect()).collect();
        assert!(hoyer_sparsity(&singular_values(&eye)).abs() < 1e-12);
    }
}
