//! Central-difference gradient checking.
//!
//! Every hand-written backward pass in this crate is anchored to this checker
//! rather than to a derivation on paper. The criterion is relative difference
//! per coordinate, with an absolute-difference fallback so that coordinates
//! whose true gradient is (near) zero do not fail on finite-difference noise.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Perturbation step for the central difference.
    pub step: f64,
    /// Maximum allowed relative difference.
    pub rel_tol: f64,
    /// Absolute differences below this pass regardless of the relative test.
    pub abs_fallback: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            rel_tol: 1e-5,
            abs_fallback: 1e-8,
        }
    }
}

impl GradCheckConfig {
    pub fn with_rel_tol(mut self, tol: f64) -> Self {
        self.rel_tol = tol;
        self
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_abs_diff: f64,
    /// Largest relative difference among coordinates not absorbed by the
    /// absolute fallback.
    pub max_rel_diff: f64,
    pub passed: bool,
    /// Index of the worst coordinate, for diagnostics.
    pub worst_index: usize,
}

/// Compare an analytic gradient against central finite differences of `f`.
///
/// `f` is evaluated at perturbed copies of `params`; it must be a pure
/// function of the parameter vector.
pub fn grad_check(
    mut f: impl FnMut(&[f64]) -> f64,
    params: &[f64],
    analytic: &[f64],
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    if params.len() != analytic.len() {
        return Err(Error::Shape {
            op: "grad_check",
            expected: format!("{} gradient entries", params.len()),
            got: format!("{}", analytic.len()),
        });
    }
    let mut work = params.to_vec();
    let mut max_abs = 0.0f64;
    let mut max_rel = 0.0f64;
    let mut worst = 0usize;
    for k in 0..work.len() {
        let orig = work[k];
        work[k] = orig + cfg.step;
        let up = f(&work);
        work[k] = orig - cfg.step;
        let down = f(&work);
        work[k] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!(
                "grad_check evaluation at coordinate {k}"
            )));
        }
        let numeric = (up - down) / (2.0 * cfg.step);
        let abs_diff = (analytic[k] - numeric).abs();
        let denom = analytic[k].abs().max(numeric.abs());
        let rel = if abs_diff <= cfg.abs_fallback {
            0.0
        } else {
            abs_diff / denom
        };
        if abs_diff > max_abs {
            max_abs = abs_diff;
        }
        if rel > max_rel {
            max_rel = rel;
            worst = k;
        }
    }
    Ok(GradCheckReport {
        max_abs_diff: max_abs,
        max_rel_diff: max_rel,
        passed: max_rel <= cfg.rel_tol,
        worst_index: worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_passes() {
        let f = |p: &[f64]| p[0] * p[0];
        let report = grad_check(f, &[3.0], &[6.0], &GradCheckConfig::default()).unwrap();
        assert!(report.passed, "rel diff {}", report.max_rel_diff);
    }

    #[test]
    fn scaled_gradient_fails() {
        // Negative control: analytic gradient deliberately doubled.
        let f = |p: &[f64]| p[0] * p[0];
        let report = grad_check(f, &[3.0], &[12.0], &GradCheckConfig::default()).unwrap();
        assert!(!report.passed);
    }

    #[test]
    fn zero_gradient_uses_absolute_fallback() {
        let f = |_: &[f64]| 1.0;
        let report = grad_check(f, &[0.7], &[0.0], &GradCheckConfig::default()).unwrap();
        assert!(report.passed);
        assert_eq!(report.max_rel_diff, 0.0);
    }

    #[test]
    fn non_finite_evaluation_is_an_error() {
        let f = |p: &[f64]| 1.0 / (p[0] - 1.0);
        let err = grad_check(f, &[1.0 - 1e-5], &[0.0], &GradCheckConfig::default());
        assert!(err.is_err());
    }

    #[test]
    fn multivariate_passes() {
        let f = |p: &[f64]| p[0] * p[1] + p[1].sin();
        let p = [0.4f64, -1.3];
        let grad = [p[1], p[0] + p[1].cos()];
        let report = grad_check(f, &p, &grad, &GradCheckConfig::default()).unwrap();
        assert!(report.passed, "rel diff {}", report.max_rel_diff);
    }
}
