//! Central finite-difference checks for tape gradients.

use super::{Tape, Tensor, Var};
use crate::error::Result;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// Outcome of checking one function against finite differences.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub name: String,
    /// Worst per-input relative error `|a - n| / max(|a|, |n|)` (tensor norms).
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub tolerance: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

/// Loss value and tape gradients with respect to each input.
pub fn analytic_gradient<F>(f: &F, inputs: &[Tensor]) -> Result<(f64, Vec<Tensor>)>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&tape, &vars)?;
    let value = tape.item(loss);
    let grads = tape.backward(loss)?;
    Ok((value, vars.iter().map(|v| grads.wrt(*v)).collect()))
}

fn evaluate<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let loss = f(&tape, &vars)?;
    Ok(tape.item(loss))
}

/// Central differences `(f(x + h) - f(x - h)) / 2h`, one coordinate at a time.
pub fn numeric_gradient<F>(f: &F, inputs: &[Tensor], step: f64) -> Result<Vec<Tensor>>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut grad = Tensor::zeros(inputs[i].shape());
        for j in 0..inputs[i].len() {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + step;
            let plus = evaluate(f, &work)?;
            work[i].data_mut()[j] = orig - step;
            let minus = evaluate(f, &work)?;
            work[i].data_mut()[j] = orig;
            grad.data_mut()[j] = (plus - minus) / (2.0 * step);
        }
        out.push(grad);
    }
    Ok(out)
}

/// Norm-wise relative error between two gradient tensors. Falls back to the
/// absolute difference when both are (numerically) zero.
pub fn relative_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    let diff: f64 = analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    let scale = analytic.norm().max(numeric.norm());
    if scale < 1e-10 {
        diff
    } else {
        diff / scale
    }
}

/// Compares already computed gradients; used directly by negative controls.
pub fn compare(name: &str, analytic: &[Tensor], numeric: &[Tensor], tolerance: f64) -> GradCheck {
    let mut max_rel: f64 = 0.0;
    let mut max_abs: f64 = 0.0;
    for (a, n) in analytic.iter().zip(numeric) {
        max_rel = max_rel.max(relative_error(a, n));
        max_abs = max_abs.max(a.max_abs_diff(n));
    }
    GradCheck {
        name: name.to_string(),
        max_rel_error: max_rel,
        max_abs_error: max_abs,
        tolerance,
    }
}

pub fn check<F>(name: &str, f: F, inputs: &[Tensor]) -> Result<GradCheck>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    let (_, analytic) = analytic_gradient(&f, inputs)?;
    let numeric = numeric_gradient(&f, inputs, DEFAULT_STEP)?;
    Ok(compare(name, &analytic, &numeric, DEFAULT_TOLERANCE))
}
