//! Central finite-difference checks for analytic gradients.
//!
//! The finite-difference side only ever calls the scalar loss function; it
//! never touches a backward pass.

use super::params::{assign_flat, flatten, Params};

/// Step used for central differences at 64-bit precision.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Entries whose analytic and numeric values both fall below this magnitude
/// are compared absolutely; roundoff in the difference quotient dominates there.
pub const ABS_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance
    }
}

/// `(f(x + h) - f(x - h)) / 2h` for a scalar function of a vector.
pub fn central_difference<F: Fn(&[f64]) -> f64>(x: &[f64], index: usize, step: f64, f: F) -> f64 {
    let mut probe = x.to_vec();
    probe[index] = x[index] + step;
    let plus = f(&probe);
    probe[index] = x[index] - step;
    let minus = f(&probe);
    (plus - minus) / (2.0 * step)
}

/// Relative error with an absolute floor for vanishing entries.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff <= ABS_FLOOR {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs())
}

/// Compare an analytic gradient vector against central differences of `f`
/// at every index in `indices`.
pub fn check_vector<F: Fn(&[f64]) -> f64>(
    x: &[f64],
    analytic: &[f64],
    indices: &[usize],
    step: f64,
    f: F,
) -> GradCheckReport {
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst_index: None,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };
    for &i in indices {
        let numeric = central_difference(x, i, step, &f);
        let err = relative_error(analytic[i], numeric);
        report.checked += 1;
        if report.worst_index.is_none() || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_index = Some(i);
            report.worst_analytic = analytic[i];
            report.worst_numeric = numeric;
        }
    }
    report
}

/// Check the gradient of a model-valued loss. `grad` must be the analytic
/// gradient of `loss` at `model`, stored in a value of the model's type.
pub fn check_params<M, F>(model: &M, grad: &M, indices: &[usize], step: f64, loss: F) -> GradCheckReport
where
    M: Params + Clone,
    F: Fn(&M) -> f64,
{
    let x = flatten(model);
    let g = flatten(grad);
    let eval = |values: &[f64]| {
        let mut m = model.clone();
        assign_flat(&mut m, values);
        loss(&m)
    };
    check_vector(&x, &g, indices, step, eval)
}
