//! Central finite-difference gradient checking.
//!
//! A checked layer wraps its inputs as [`Param`]s so input gradients are
//! verified together with weight gradients, and reduces its output to a
//! scalar (usually a dot product with a fixed random probe).

use serde::Serialize;

use super::{Param, ParamsMut};

/// Magnitude below which gradients are compared absolutely rather than
/// relatively.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-3;

pub const DEFAULT_EPS: f64 = 1e-3;
pub const DEFAULT_TOL: f64 = 1e-4;

/// A scalar objective over a set of `f64` parameters.
pub trait Differentiable {
    /// Evaluates the objective at the current parameter values. With
    /// `with_grad`, analytic gradients are accumulated into each `Param::grad`.
    fn objective(&mut self, with_grad: bool) -> f64;

    fn params_mut(&mut self) -> ParamsMut<'_, f64>;
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub name: String,
    pub passed: bool,
    pub max_rel_error: f64,
    /// `param[index]` where the largest error (or the first non-finite value)
    /// was found.
    pub worst_location: Option<String>,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    pub non_finite: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

fn zero_grads(layer: &mut dyn Differentiable) {
    for (_, p) in layer.params_mut() {
        p.zero_grad();
    }
}

fn set_element(layer: &mut dyn Differentiable, param: usize, index: usize, value: f64) -> f64 {
    let mut params = layer.params_mut();
    let slot = params[param]
        .1
        .value
        .as_slice_mut()
        .expect("parameters are contiguous")
        .get_mut(index)
        .expect("index in range");
    std::mem::replace(slot, value)
}

/// Compares analytic gradients against `(f(x + eps) - f(x - eps)) / 2 eps`
/// for every scalar in every parameter.
pub fn gradcheck(layer: &mut dyn Differentiable, eps: f64, tol: f64) -> GradCheckReport {
    zero_grads(layer);
    let base = layer.objective(true);
    let analytic: Vec<(String, Vec<f64>)> = layer
        .params_mut()
        .into_iter()
        .map(|(name, p): (String, &mut Param<f64>)| (name, p.grad.iter().copied().collect()))
        .collect();
    zero_grads(layer);

    let mut report = GradCheckReport {
        name: String::new(),
        passed: true,
        max_rel_error: 0.0,
        worst_location: None,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
        non_finite: false,
    };
    if !base.is_finite() {
        report.passed = false;
        report.non_finite = true;
        report.worst_location = Some("objective".into());
        return report;
    }

    for (pi, (name, grads)) in analytic.iter().enumerate() {
        for (ei, &a) in grads.iter().enumerate() {
            let orig = set_element(layer, pi, ei, 0.0);
            set_element(layer, pi, ei, orig + eps);
            let plus = layer.objective(false);
            set_element(layer, pi, ei, orig - eps);
            let minus = layer.objective(false);
            set_element(layer, pi, ei, orig);
            let n = (plus - minus) / (2.0 * eps);
            report.checked += 1;
            if !a.is_finite() || !n.is_finite() {
                report.passed = false;
                report.non_finite = true;
                report.max_rel_error = f64::INFINITY;
                report.worst_location = Some(format!("{name}[{ei}]"));
                report.analytic = a;
                report.numeric = n;
                return report;
            }
            let err = relative_error(a, n);
            if err > report.max_rel_error || report.worst_location.is_none() {
                report.max_rel_error = err;
                report.worst_location = Some(format!("{name}[{ei}]"));
                report.analytic = a;
                report.numeric = n;
            }
        }
    }
    report.passed = report.max_rel_error < tol;
    report
}
