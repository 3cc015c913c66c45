//! Finite-difference gradient verification for test suites.

use crate::array::Array;
use crate::tape::{Tape, Var};

/// Result of comparing analytic and numeric gradients for one input.
#[derive(Debug)]
pub struct GradReport {
    pub max_abs_err: f64,
    pub max_rel_err: f64,
}

/// Checks analytic gradients against central finite differences in f64.
///
/// `build` must construct the graph from the given leaves and return the
/// scalar root. It is re-run twice per input element, so keep inputs small.
/// The relative error uses a unit floor to avoid blowups near zero.
pub fn grad_check(
    inputs: &[Array<f64>],
    eps: f64,
    build: impl Fn(&mut Tape<f64>, &[Var]) -> Var,
) -> Vec<GradReport> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|a| tape.leaf(a.clone())).collect();
    let root = build(&mut tape, &vars);
    let grads = tape.backward(root).expect("scalar root");

    let eval = |perturbed: &[Array<f64>]| -> f64 {
        let mut t = Tape::new();
        let vs: Vec<Var> = perturbed.iter().map(|a| t.leaf(a.clone())).collect();
        let r = build(&mut t, &vs);
        t.value(r).item()
    };

    let mut reports = Vec::with_capacity(inputs.len());
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[i])
            .cloned()
            .unwrap_or_else(|| Array::zeros(input.rows, input.cols));
        let mut max_abs = 0.0f64;
        let mut max_rel = 0.0f64;
        for j in 0..input.len() {
            let mut plus: Vec<Array<f64>> = inputs.to_vec();
            plus[i].data[j] += eps;
            let mut minus: Vec<Array<f64>> = inputs.to_vec();
            minus[i].data[j] -= eps;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * eps);
            let a = analytic.data[j];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(1.0);
            max_abs = max_abs.max(abs);
            max_rel = max_rel.max(rel);
        }
        reports.push(GradReport {
            max_abs_err: max_abs,
            max_rel_err: max_rel,
        });
    }
    reports
}

/// Panics if any input's gradient disagrees with finite differences.
pub fn assert_grads_close(
    inputs: &[Array<f64>],
    eps: f64,
    tol: f64,
    build: impl Fn(&mut Tape<f64>, &[Var]) -> Var,
) {
    for (i, report) in grad_check(inputs, eps, build).iter().enumerate() {
        assert!(
            report.max_rel_err <= tol,
            "input {i}: rel err {} (abs {}) over tolerance {tol}",
            report.max_rel_err,
            report.max_abs_err
        );
    }
}
