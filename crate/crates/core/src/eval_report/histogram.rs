/// `KL(p || uniform)` over `p.len()` outcomes, with `0 ln 0 = 0`.
pub fn kl_to_uniform(p: &[f64]) -> f64 {
    let n = p.len() as f64;
    p.iter().filter(|&&x| x > 0.0).map(|&x| x * (n * x).ln()).sum()
}

/// Normalised selection histogram and its KL to uniform.
pub fn expert_histogram_kl(counts: &[usize]) -> (Vec<f64>, f64) {
    let total: usize = counts.iter().sum();
    assert!(total > 0, "histogram needs at least one selection");
    let p: Vec<f64> = counts.iter().map(|&c| c as f64 / total as f64).collect();
    let kl = kl_to_uniform(&p);
    (p, kl)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn analytic_cases() {
        assert_eq!(expert_histogram_kl(&[7; 10]).1, 0.0);
        let mut one = vec![0; 10];
        one[4] = 200;
        assert!((expert_histogram_kl(&one).1 - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn small_counts_match_direct_sum() {
        let counts = [2, 1, 1, 0, 0, 0, 0, 0, 0, 0];
        // p = (1/2, 1/4, 1/4): sum p ln(10 p)
        let direct = 0.5 * (5.0f64).ln() + 2.0 * 0.25 * (2.5f64).ln();
        assert!((expert_histogram_kl(&counts).1 - direct).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn kl_is_bounded(counts in proptest::collection::vec(0usize..50, 10)) {
            prop_assume!(counts.iter().sum::<usize>() > 0);
            let (p, kl) = expert_histogram_kl(&counts);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(kl >= -1e-12);
            prop_assert!(kl <= 10f64.ln() + 1e-12);
        }
    }
}
