//! Kullback-Leibler divergence between the geometric contact distribution
//! and the Poisson family, used to judge how well an estimated Poisson rate
//! compensates for a misspecified contact distribution.

use crate::error::{Error, Result};

/// D_KL(Geometric(p) || Poisson(lambda)) in nats, with the geometric on
/// support {0, 1, 2, ...}: the information lost when the fitted Poisson is
/// used in place of the true geometric.
///
/// The series is truncated once the geometric tail mass drops below 1e-12.
/// `lambda = 0` puts zero Poisson mass on every k >= 1, so the divergence is
/// infinite and reported as such.
pub fn kl_poisson_vs_geometric(lambda: f64, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Config(format!("geometric p = {p} outside (0,1)")));
    }
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(Error::Config(format!("lambda = {lambda} must be >= 0")));
    }
    if lambda == 0.0 {
        return Ok(f64::INFINITY);
    }
    // Truncating at 1e-16 tail mass comfortably exceeds the guaranteed
    // 1e-12 criterion; the log-factorial factor in the summand needs the
    // extra margin for 1e-10 absolute accuracy.
    let n_terms = terms_for_tail(p, 1e-16);
    Ok(kl_truncated(lambda, p, n_terms))
}

/// Number of terms so the geometric tail beyond them is below `tail_mass`.
fn terms_for_tail(p: f64, tail_mass: f64) -> usize {
    // Tail after k = K-1 is (1-p)^K.
    let k = (tail_mass.ln() / (1.0 - p).ln()).ceil() as usize;
    k.max(8)
}

pub(crate) fn kl_truncated(lambda: f64, p: f64, n_terms: usize) -> f64 {
    let ln_p = p.ln();
    let ln_q = (1.0 - p).ln();
    let ln_lambda = lambda.ln();
    let mut ln_factorial = 0.0;
    let mut sum = 0.0;
    for k in 0..n_terms {
        if k > 0 {
            ln_factorial += (k as f64).ln();
        }
        let ln_g = ln_p + k as f64 * ln_q;
        let ln_f = -lambda + k as f64 * ln_lambda - ln_factorial;
        sum += ln_g.exp() * (ln_g - ln_f);
    }
    sum
}

/// Locate the Poisson rate minimizing the divergence by a coarse grid search
/// followed by golden-ratio-free interval refinement.
pub fn kl_minimizing_lambda(p: f64, lambda_min: f64, lambda_max: f64) -> Result<(f64, f64)> {
    if !(lambda_min > 0.0 && lambda_max > lambda_min) {
        return Err(Error::Config(format!(
            "invalid search interval [{lambda_min}, {lambda_max}]"
        )));
    }
    let coarse = 400;
    let mut best_lambda = lambda_min;
    let mut best_value = f64::INFINITY;
    for i in 0..=coarse {
        let lambda = lambda_min + (lambda_max - lambda_min) * i as f64 / coarse as f64;
        let v = kl_poisson_vs_geometric(lambda, p)?;
        if v < best_value {
            best_value = v;
            best_lambda = lambda;
        }
    }
    let mut width = (lambda_max - lambda_min) / coarse as f64;
    for _ in 0..8 {
        let lo = (best_lambda - width).max(lambda_min);
        let hi = (best_lambda + width).min(lambda_max);
        for i in 0..=40 {
            let lambda = lo + (hi - lo) * i as f64 / 40.0;
            let v = kl_poisson_vs_geometric(lambda, p)?;
            if v < best_value {
                best_value = v;
                best_lambda = lambda;
            }
        }
        width /= 10.0;
    }
    Ok((best_lambda, best_value))
}

/// Tabulate the divergence over a lambda grid (the data behind the
/// calibration curve plots).
pub fn kl_curve(p: f64, lambda_min: f64, lambda_max: f64, steps: usize) -> Result<Vec<(f64, f64)>> {
    if steps < 2 {
        return Err(Error::Config("kl curve needs at least 2 steps".into()));
    }
    (0..steps)
        .map(|i| {
            let lambda =
                lambda_min + (lambda_max - lambda_min) * i as f64 / (steps - 1) as f64;
            kl_poisson_vs_geometric(lambda, p).map(|v| (lambda, v))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn divergence_is_strictly_positive() {
        for &p in &[0.2, 0.5, 0.8] {
            for &lambda in &[0.1, 0.5, 1.0, 2.0, 4.0] {
                let v = kl_poisson_vs_geometric(lambda, p).unwrap();
                assert!(v > 0.0, "p {p} lambda {lambda}: {v}");
            }
        }
    }

    #[test]
    fn zero_lambda_is_infinite() {
        assert!(kl_poisson_vs_geometric(0.0, 0.5).unwrap().is_infinite());
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(kl_poisson_vs_geometric(1.0, 0.0).is_err());
        assert!(kl_poisson_vs_geometric(1.0, 1.0).is_err());
        assert!(kl_poisson_vs_geometric(-1.0, 0.5).is_err());
    }

    #[test]
    fn minimizer_matches_brute_force_grid() {
        // Independent oracle: exhaustive grid over [0.01, 5] at 1e-4 steps.
        let p = 0.5;
        let mut best_lambda = 0.0;
        let mut best_value = f64::INFINITY;
        let steps = ((5.0 - 0.01) / 1e-4) as usize;
        for i in 0..=steps {
            let lambda = 0.01 + 1e-4 * i as f64;
            let v = kl_poisson_vs_geometric(lambda, p).unwrap();
            if v < best_value {
                best_value = v;
                best_lambda = lambda;
            }
        }
        let (refined, refined_value) = kl_minimizing_lambda(p, 0.01, 5.0).unwrap();
        assert!(
            (refined - best_lambda).abs() < 1e-4,
            "refined {refined} vs grid {best_lambda}"
        );
        assert!((refined_value - best_value).abs() < 1e-9);
        // The geometric mean (1-p)/p = 1 is the analytic minimizer.
        assert!((refined - 1.0).abs() < 1e-3, "refined {refined}");
    }

    #[test]
    fn truncation_is_converged() {
        for &p in &[0.3, 0.5, 0.7] {
            for &lambda in &[0.2, 1.0, 3.0] {
                let base_terms = super::terms_for_tail(p, 1e-16);
                let a = kl_truncated(lambda, p, base_terms);
                let b = kl_truncated(lambda, p, base_terms + 50);
                assert!((a - b).abs() < 1e-10, "p {p} lambda {lambda}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn curve_has_requested_shape() {
        let curve = kl_curve(0.5, 0.1, 3.0, 60).unwrap();
        assert_eq!(curve.len(), 60);
        assert_eq!(curve[0].0, 0.1);
        assert_eq!(curve[59].0, 3.0);
        let min = curve
            .iter()
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap();
        assert!((min.0 - 1.0).abs() < 0.06);
    }
}
