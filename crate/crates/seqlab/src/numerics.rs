//! Small shared numerical helpers.
//!
//! All log-sum-exp style computations subtract the maximum before
//! exponentiating; temperatures as small as 0.01 would otherwise overflow.

/// Max-subtracted log-sum-exp. Returns `-inf` for an empty slice.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let sum: f64 = xs.iter().map(|x| (x - m).exp()).sum();
    m + sum.ln()
}

/// Stabilized softmax over a nonempty slice.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    debug_assert!(!xs.is_empty());
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Shannon entropy `-sum p ln p` with the `0 ln 0 = 0` convention.
pub fn entropy(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

/// KL divergence `sum p ln(p/q)` with the `0 ln 0 = 0` convention.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    debug_assert_eq!(p.len(), q.len());
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / qi).ln())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logsumexp_matches_naive_on_small_inputs() {
        let xs = [0.0_f64, 1.0, 0.0];
        let naive = (xs.iter().map(|x| x.exp()).sum::<f64>()).ln();
        assert!((logsumexp(&xs) - naive).abs() < 1e-15);
    }

    #[test]
    fn logsumexp_survives_large_magnitudes() {
        let xs = [1000.0, 1000.0];
        assert!((logsumexp(&xs) - (1000.0 + 2.0_f64.ln())).abs() < 1e-12);
        let xs = [-2000.0, -2000.0];
        assert!((logsumexp(&xs) - (-2000.0 + 2.0_f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn softmax_sums_to_one_and_orders() {
        let p = softmax(&[0.0, 1.0, 0.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((p[1] - std::f64::consts::E / (2.0 + std::f64::consts::E)).abs() < 1e-15);
    }

    #[test]
    fn entropy_reference_values() {
        assert!((entropy(&[1.0 / 3.0; 3]) - 3.0_f64.ln()).abs() < 1e-15);
        assert_eq!(entropy(&[1.0, 0.0]), 0.0);
        assert!((entropy(&[0.5, 0.5]) - 2.0_f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn kl_of_identical_distributions_is_zero() {
        let p = [0.2, 0.3, 0.5];
        assert_eq!(kl_divergence(&p, &p), 0.0);
    }
}
