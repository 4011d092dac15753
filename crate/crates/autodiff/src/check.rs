//! Finite-difference verification of tape gradients.

use crate::error::Result;
use crate::real::Real;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// `(parameter index, flat coordinate)` of the worst entry.
    pub worst: Option<(usize, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
}

/// `|a − n| / max(1e-8, |a| + |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares reverse-mode gradients of `f` against central differences with
/// step `eps` over every coordinate of every parameter.
pub fn grad_check<T, F>(f: F, params: &[Tensor<T>], eps: f64) -> Result<GradCheckReport>
where
    T: Real,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    grad_check_coords(f, params, eps, usize::MAX)
}

/// Like [`grad_check`] but visits at most `max_coords` evenly spaced
/// coordinates per parameter.
pub fn grad_check_coords<T, F>(f: F, params: &[Tensor<T>], eps: f64, max_coords: usize) -> Result<GradCheckReport>
where
    T: Real,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let eval = |ps: &[Tensor<T>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item().to_f64().unwrap_or(f64::NAN))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor<T>> = vars.iter().map(|&v| grads.get(v)).collect();

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        coordinates: 0,
    };
    let mut work = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        let n = p.len();
        let stride = n.div_ceil(max_coords.max(1)).max(1);
        for c in (0..n).step_by(stride) {
            let orig = p.data()[c];
            let x = orig.to_f64().unwrap_or(f64::NAN);
            work[pi].data_mut()[c] = T::from_f64_lossy(x + eps);
            let up = eval(&work)?;
            work[pi].data_mut()[c] = T::from_f64_lossy(x - eps);
            let down = eval(&work)?;
            work[pi].data_mut()[c] = orig;

            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[pi].data()[c].to_f64().unwrap_or(f64::NAN);
            let err = relative_error(a, numeric);
            report.coordinates += 1;
            if err > report.max_relative_error || err.is_nan() {
                report.max_relative_error = if err.is_nan() { f64::INFINITY } else { err };
                report.worst = Some((pi, c));
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
