/// `sum_k |tau - 1{x_k < v}| (x_k - v)`, strictly decreasing in `v`.
pub fn expectile_residual(xs: &[f64], tau: f64, v: f64) -> f64 {
    xs.iter()
        .map(|&x| {
            let w = if x < v { 1.0 - tau } else { tau };
            w * (x - v)
        })
        .sum()
}

/// The tau-expectile of a sample as the root of [`expectile_residual`],
/// found by bisection on `[min, max]`.
pub fn expectile_bisect(xs: &[f64], tau: f64) -> f64 {
    assert!(!xs.is_empty(), "expectile of an empty sample");
    assert!(tau > 0.0 && tau < 1.0, "tau must lie in (0,1)");
    let mut lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for _ in 0..200 {
        if hi - lo <= 1e-13 * (1.0 + lo.abs().max(hi.abs())) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if expectile_residual(xs, tau, mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn median_tau_gives_mean() {
        let xs = [1.0, 2.0, 4.0, -3.5];
        assert!((expectile_bisect(&xs, 0.5) - 0.875).abs() < 1e-10);
    }

    #[test]
    fn high_tau_approaches_max() {
        assert!((expectile_bisect(&[1.0, 2.0, 4.0], 0.999) - 4.0).abs() < 0.05);
    }

    #[test]
    fn agrees_with_direct_minimisation() {
        // golden-section minimisation of sum |tau - 1{u<0}| u^2, u = x - v
        let xs = [1.0, 2.0, 4.0];
        let tau = 0.9;
        let loss = |v: f64| -> f64 {
            xs.iter()
                .map(|&x| {
                    let u = x - v;
                    (tau - if u < 0.0 { 1.0f64 } else { 0.0 }).abs() * u * u
                })
                .sum()
        };
        let (mut a, mut b) = (1.0, 4.0);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if loss(c) < loss(d) {
                b = d;
            } else {
                a = c;
            }
        }
        let gs = 0.5 * (a + b);
        let bis = expectile_bisect(&xs, tau);
        assert!((gs - bis).abs() < 1e-6);
        // closed form: 1 and 2 lie below the root, so
        // 0.1 (1 - v) + 0.1 (2 - v) + 0.9 (4 - v) = 0
        assert!((bis - 3.9 / 1.1).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn monotone_in_tau(xs in proptest::collection::vec(-5.0f64..5.0, 1..20), t1 in 0.01f64..0.99, t2 in 0.01f64..0.99) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            prop_assert!(expectile_bisect(&xs, lo) <= expectile_bisect(&xs, hi) + 1e-9);
        }
    }
}
