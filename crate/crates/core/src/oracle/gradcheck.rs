#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Compare an analytic gradient against central differences of `f`.
///
/// Relative error is `|a - n| / max(|a|, |n|, floor)`; the floor keeps
/// near-zero partials from turning rounding noise into huge ratios.
/// `coords` restricts the check to a subset of coordinates.
pub fn grad_check<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x: &[f64],
    analytic: &[f64],
    h: f64,
    floor: f64,
    coords: Option<&[usize]>,
) -> GradCheckReport {
    assert_eq!(x.len(), analytic.len(), "gradient length mismatch");
    let all: Vec<usize>;
    let idx = match coords {
        Some(c) => c,
        None => {
            all = (0..x.len()).collect();
            &all
        }
    };
    let mut rep = GradCheckReport {
        max_rel_err: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let mut p = x.to_vec();
    for &i in idx {
        let orig = p[i];
        p[i] = orig + h;
        let up = f(&p);
        p[i] = orig - h;
        let dn = f(&p);
        p[i] = orig;
        let num = (up - dn) / (2.0 * h);
        let a = analytic[i];
        let rel = (a - num).abs() / a.abs().max(num.abs()).max(floor);
        rep.checked += 1;
        if rel > rep.max_rel_err || rep.checked == 1 {
            rep = GradCheckReport {
                max_rel_err: rel.max(rep.max_rel_err),
                worst_index: i,
                analytic: a,
                numeric: num,
                checked: rep.checked,
            };
        }
    }
    rep
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let w = [0.5, -2.0, 3.25];
        let f = |x: &[f64]| x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        let r = grad_check(f, &[1.0, 2.0, 3.0], &w, 1e-5, 1e-6, None);
        assert!(r.max_rel_err < 1e-10);
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let f = |x: &[f64]| x[0] * x[0];
        let r = grad_check(f, &[1.0], &[3.0], 1e-5, 1e-6, None);
        assert!(r.max_rel_err > 0.3);
        assert_eq!(r.worst_index, 0);
    }

    #[test]
    fn expectile_kink_is_skipped() {
        // L(u) = |tau - 1{u<0}| u^2 has a one-sided second derivative at
        // u = 0; the first derivative is continuous (zero), so the check
        // passes there but a second-order check would not. We only check
        // away from the kink.
        let tau = 0.9;
        let l = |u: f64| (tau - if u < 0.0 { 1.0f64 } else { 0.0 }).abs() * u * u;
        for &u in &[-1.0, -0.3, 0.2, 1.5] {
            let g = 2.0 * (tau - if u < 0.0 { 1.0f64 } else { 0.0 }).abs() * u;
            let r = grad_check(|x: &[f64]| l(x[0]), &[u], &[g], 1e-5, 1e-6, None);
            assert!(r.max_rel_err < 1e-8);
        }
    }
}
