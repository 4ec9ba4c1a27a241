//! Central finite-difference checks for analytic gradients.

use alloc::string::String;
use alloc::vec::Vec;

use crate::numeric::relative_error;

/// Default central-difference step for double precision.
pub const DEFAULT_STEP: f64 = 1e-6;

/// Gradients smaller than this are compared on an absolute scale: the
/// relative error denominator is `max(|analytic|, |numeric|, GRAD_FLOOR)`.
pub const GRAD_FLOOR: f64 = 1e-3;

/// Outcome of checking one parameter class.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    /// Flat index of the worst coordinate.
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

impl GradCheck {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance
    }

    fn empty(name: &str) -> Self {
        Self {
            name: String::from(name),
            checked: 0,
            max_rel_error: 0.0,
            worst_index: 0,
            worst_analytic: 0.0,
            worst_numeric: 0.0,
        }
    }

    fn record(&mut self, i: usize, analytic: f64, numeric: f64) {
        let err = relative_error(analytic, numeric, GRAD_FLOOR);
        self.checked += 1;
        if err > self.max_rel_error || self.checked == 1 {
            self.max_rel_error = err;
            self.worst_index = i;
            self.worst_analytic = analytic;
            self.worst_numeric = numeric;
        }
    }
}

/// `(f(v + h) − f(v − h)) / 2h` at coordinate `i` of `values`, restoring it afterwards.
pub fn central_difference(values: &mut [f64], i: usize, step: f64, f: &mut dyn FnMut(&[f64]) -> f64) -> f64 {
    let orig = values[i];
    values[i] = orig + step;
    let plus = f(values);
    values[i] = orig - step;
    let minus = f(values);
    values[i] = orig;
    (plus - minus) / (2.0 * step)
}

/// Compares `analytic[i]` with a central difference of `f` at each of `indices`.
pub fn check_indices(
    name: &str,
    values: &mut [f64],
    analytic: &[f64],
    indices: &[usize],
    step: f64,
    f: &mut dyn FnMut(&[f64]) -> f64,
) -> GradCheck {
    assert_eq!(values.len(), analytic.len(), "check_indices: gradient length mismatch");
    let mut report = GradCheck::empty(name);
    for &i in indices {
        let numeric = central_difference(values, i, step, f);
        report.record(i, analytic[i], numeric);
    }
    report
}

/// Vector-Jacobian counterpart of [`central_difference`]: `Σ u · (f(v + h) − f(v − h)) / 2h`.
///
/// Differencing the outputs elementwise before contracting with `upstream`
/// avoids cancelling two large scalar losses, which keeps roundoff near the
/// per-element forward error.
pub fn central_difference_vjp(
    values: &mut [f64],
    i: usize,
    step: f64,
    upstream: &[f64],
    f: &mut dyn FnMut(&[f64]) -> Vec<f64>,
) -> f64 {
    let orig = values[i];
    values[i] = orig + step;
    let plus = f(values);
    values[i] = orig - step;
    let minus = f(values);
    values[i] = orig;
    assert_eq!(plus.len(), upstream.len(), "central_difference_vjp: output length mismatch");
    let s: f64 = plus.iter().zip(&minus).zip(upstream).map(|((p, m), u)| (p - m) * u).sum();
    s / (2.0 * step)
}

/// Like [`check_indices`] for the loss `<upstream, f(values)>`, using [`central_difference_vjp`].
pub fn check_indices_vjp(
    name: &str,
    values: &mut [f64],
    analytic: &[f64],
    indices: &[usize],
    step: f64,
    upstream: &[f64],
    f: &mut dyn FnMut(&[f64]) -> Vec<f64>,
) -> GradCheck {
    assert_eq!(values.len(), analytic.len(), "check_indices_vjp: gradient length mismatch");
    let mut report = GradCheck::empty(name);
    for &i in indices {
        let numeric = central_difference_vjp(values, i, step, upstream, f);
        report.record(i, analytic[i], numeric);
    }
    report
}

/// [`check_indices_vjp`] over every coordinate.
pub fn check_all_vjp(
    name: &str,
    values: &mut [f64],
    analytic: &[f64],
    step: f64,
    upstream: &[f64],
    f: &mut dyn FnMut(&[f64]) -> Vec<f64>,
) -> GradCheck {
    let indices: Vec<usize> = (0..values.len()).collect();
    check_indices_vjp(name, values, analytic, &indices, step, upstream, f)
}

/// [`check_indices`] over every coordinate.
pub fn check_all(
    name: &str,
    values: &mut [f64],
    analytic: &[f64],
    step: f64,
    f: &mut dyn FnMut(&[f64]) -> f64,
) -> GradCheck {
    let indices: Vec<usize> = (0..values.len()).collect();
    check_indices(name, values, analytic, &indices, step, f)
}
