/// Asymmetric squared loss `|tau - 1{u<0}| * u^2`.
pub fn expectile_loss(u: f64, tau: f64) -> f64 {
    expectile_weight(u, tau) * u * u
}

/// Derivative of [`expectile_loss`] in `u`. Continuous at zero, so the kink
/// only affects second derivatives.
pub fn expectile_dloss(u: f64, tau: f64) -> f64 {
    2.0 * expectile_weight(u, tau) * u
}

pub fn expectile_weight(u: f64, tau: f64) -> f64 {
    if u < 0.0 {
        1.0 - tau
    } else {
        tau
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_case_is_half_square() {
        assert_eq!(expectile_loss(0.0, 0.3), 0.0);
        assert_eq!(expectile_loss(2.0, 0.5), 2.0);
        assert_eq!(expectile_loss(-2.0, 0.5), 2.0);
        assert!((expectile_loss(-1.0, 0.9) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn derivative_matches_differences() {
        for &(u, tau) in &[(0.7, 0.9), (-0.4, 0.9), (1.3, 0.1), (-2.0, 0.99)] {
            let h = 1e-6;
            let num = (expectile_loss(u + h, tau) - expectile_loss(u - h, tau)) / (2.0 * h);
            assert!((num - expectile_dloss(u, tau)).abs() < 1e-6);
        }
    }
}
