use alloc::format;
use alloc::vec::Vec;

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of [`grad_check`].
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Max over every entry of every parameter of
    /// `|analytic − numeric| / max(1, |analytic|, |numeric|)`.
    pub max_rel_error: f64,
    /// The same maximum, per parameter tensor.
    pub per_param: Vec<f64>,
    pub evaluations: usize,
}

/// Compares tape gradients of the scalar `f` against central differences.
///
/// `f` receives a fresh tape with `params[i]` bound as parameter leaf `i` and
/// must return a `1 × 1` node.
pub fn grad_check<F>(mut f: F, params: &[Tensor], eps: f64) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(1e-6..=1e-4).contains(&eps) {
        return Err(Error::validation(
            "eps",
            format!("{eps} not in [1e-6, 1e-4]"),
        ));
    }

    let mut eval = |values: &[Tensor]| -> Result<(Tape, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out).item()?;
        if !v.is_finite() {
            return Err(Error::Evaluation(format!("non-finite loss {v}")));
        }
        Ok((tape, vars, out))
    };

    let (tape, vars, out) = eval(params)?;
    let shapes: Vec<[usize; 2]> = params.iter().map(Tensor::shape).collect();
    let analytic = tape.backward(out)?.params(&vars, &shapes);

    let mut work: Vec<Tensor> = params.to_vec();
    let mut per_param = Vec::with_capacity(params.len());
    let mut evaluations = 1;
    for p in 0..params.len() {
        let mut worst: f64 = 0.0;
        for e in 0..params[p].len() {
            let orig = params[p].data()[e];
            work[p].data_mut()[e] = orig + eps;
            let (t_plus, _, o_plus) = eval(&work)?;
            work[p].data_mut()[e] = orig - eps;
            let (t_minus, _, o_minus) = eval(&work)?;
            work[p].data_mut()[e] = orig;
            evaluations += 2;

            let numeric =
                (t_plus.value(o_plus).data()[0] - t_minus.value(o_minus).data()[0]) / (2.0 * eps);
            let a = analytic[p].data()[e];
            let rel = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            worst = worst.max(rel);
        }
        per_param.push(worst);
    }

    Ok(GradCheckReport {
        max_rel_error: per_param.iter().copied().fold(0.0, f64::max),
        per_param,
        evaluations,
    })
}
