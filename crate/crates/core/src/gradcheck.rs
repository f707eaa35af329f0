//! Central-difference gradient checking.
//!
//! The checker perturbs every coordinate of a parameter grid by ±h, forms the
//! centered difference, and compares against the analytic gradient with the
//! relative error `|fd - an| / max(|fd|, |an|, 1e-8)`. It is used throughout
//! the test suites and exposed as a CLI diagnostic.

use serde::Serialize;

use crate::error::{Error, Result};

/// Default perturbation step in double precision.
pub const DEFAULT_STEP: f64 = 1e-4;
/// Floor of the relative-error denominator.
pub const REL_ERROR_FLOOR: f64 = 1e-8;

/// Outcome of one gradient check.
#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub op_name: String,
    pub max_rel_error: f64,
    pub num_points: usize,
    pub step: f64,
}

/// Checks an analytic gradient of a scalar function against central finite
/// differences at `point`.
pub fn check_scalar_fn<F, G>(
    op_name: &str,
    mut f: F,
    analytic_grad: G,
    point: &[f64],
    step: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> f64,
    G: FnOnce(&[f64]) -> Vec<f64>,
{
    if step <= 0.0 || !step.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    let base = f(point);
    if !base.is_finite() {
        return Err(Error::NonFinite("gradient check objective"));
    }
    let grad = analytic_grad(point);
    if grad.len() != point.len() {
        return Err(Error::LengthMismatch {
            expected: point.len(),
            actual: grad.len(),
        });
    }

    let mut probe = point.to_vec();
    let mut max_rel_error = 0.0f64;
    for i in 0..point.len() {
        probe[i] = point[i] + step;
        let fp = f(&probe);
        probe[i] = point[i] - step;
        let fm = f(&probe);
        probe[i] = point[i];
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite("gradient check objective"));
        }
        let fd = (fp - fm) / (2.0 * step);
        let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(REL_ERROR_FLOOR);
        max_rel_error = max_rel_error.max(rel);
    }

    Ok(GradCheckReport {
        op_name: op_name.to_string(),
        max_rel_error,
        num_points: point.len(),
        step,
    })
}
