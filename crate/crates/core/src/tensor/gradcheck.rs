use crate::error::{Error, Result};

use super::graph::{Graph, Var};
use super::tensor::Tensor;

/// Outcome of [`grad_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (parameter index, element index) of the worst entry.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
}

/// Builds a scalar function of `params` on a fresh graph.
pub trait ScalarFn: Fn(&mut Graph, &[Var]) -> Result<Var> {}
impl<F: Fn(&mut Graph, &[Var]) -> Result<Var>> ScalarFn for F {}

fn evaluate(f: &dyn ScalarFn, params: &[Tensor], setup: &dyn Fn(&mut Graph)) -> Result<f64> {
    let mut g = Graph::new();
    setup(&mut g);
    let vars: Vec<Var> = params.iter().map(|p| g.constant(p.clone())).collect();
    let out = f(&mut g, &vars)?;
    let v = g.value(out).item();
    if !v.is_finite() {
        return Err(Error::Numerical(format!("gradient check objective is {v}")));
    }
    Ok(v)
}

/// Compares reverse-mode gradients against central differences
/// `(f(x+h) − f(x−h)) / 2h` for every entry of every parameter.
///
/// Relative error per entry is `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check(f: &dyn ScalarFn, params: &[Tensor], step: f64) -> Result<GradCheckReport> {
    grad_check_with(f, params, step, &|_| {})
}

/// As [`grad_check`], running `setup` on every graph first (used to inject faults).
pub fn grad_check_with(
    f: &dyn ScalarFn,
    params: &[Tensor],
    step: f64,
    setup: &dyn Fn(&mut Graph),
) -> Result<GradCheckReport> {
    if !(step > 0.0) {
        return Err(Error::Numerical(format!("finite-difference step must be positive, got {step}")));
    }
    let mut g = Graph::new();
    setup(&mut g);
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let out = f(&mut g, &vars)?;
    if g.value(out).len() != 1 {
        return Err(Error::Shape("gradient check needs a scalar objective".into()));
    }
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(params)
        .map(|(v, p)| g.grad(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; p.len()]))
        .collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
    };
    let mut work = params.to_vec();
    for pi in 0..params.len() {
        for ei in 0..params[pi].len() {
            let orig = params[pi].data()[ei];
            work[pi].data_mut()[ei] = orig + step;
            let up = evaluate(f, &work, setup)?;
            work[pi].data_mut()[ei] = orig - step;
            let down = evaluate(f, &work, setup)?;
            work[pi].data_mut()[ei] = orig;

            let numeric = (up - down) / (2.0 * step);
            let a = analytic[pi][ei];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if rel > report.max_rel_error || rel.is_nan() {
                report = GradCheckReport {
                    max_rel_error: rel,
                    worst: (pi, ei),
                    analytic: a,
                    numeric,
                };
            }
        }
    }
    Ok(report)
}
