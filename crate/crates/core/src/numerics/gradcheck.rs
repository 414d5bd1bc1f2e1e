//! Central finite-difference verification of backprop gradients.

use crate::error::{Error, Result};
use crate::numerics::{Gradients, ParamSet, Tape, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coordinates: usize,
}

/// Compares `analytic` against `(f(θ+eps) − f(θ−eps)) / 2eps` for every scalar
/// of every parameter. Relative error per coordinate is
/// `|a − n| / max(1e-8, |a| + |n|)`.
pub fn finite_diff_check<F>(
    params: &ParamSet,
    analytic: &Gradients,
    eps: f64,
    mut f: F,
) -> Result<GradCheck>
where
    F: FnMut(&ParamSet) -> Result<f64>,
{
    if !(eps > 0.0) {
        return Err(Error::contract(format!("eps must be positive, got {eps}")));
    }
    if analytic.len() != params.len() {
        return Err(Error::Shape {
            op: "finite_diff_check",
            left: vec![analytic.len()],
            right: vec![params.len()],
        });
    }
    let mut probe = params.clone();
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: None,
        coordinates: 0,
    };
    for id in params.ids() {
        for k in 0..params.get(id).len() {
            let original = params.get(id).data()[k];
            let mut eval = |value: f64, probe: &mut ParamSet| -> Result<f64> {
                probe.get_mut(id).data_mut()[k] = value;
                let out = f(probe)?;
                if !out.is_finite() {
                    return Err(Error::NonFinite(format!("{}[{k}]", params.name(id))));
                }
                Ok(out)
            };
            let plus = eval(original + eps, &mut probe)?;
            let minus = eval(original - eps, &mut probe)?;
            probe.get_mut(id).data_mut()[k] = original;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.get(id).data()[k];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some((params.name(id).to_string(), k));
            }
            report.coordinates += 1;
        }
    }
    Ok(report)
}

/// Builds the loss on a fresh tape, backprops it, and checks the result
/// numerically using the same builder as the scalar function.
pub fn gradcheck<B>(params: &ParamSet, eps: f64, build: B) -> Result<GradCheck>
where
    B: Fn(&mut Tape) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::new(params);
        let loss = build(&mut tape)?;
        tape.backprop(loss)?.params
    };
    finite_diff_check(params, &analytic, eps, |p| {
        let mut tape = Tape::new(p);
        let loss = build(&mut tape)?;
        Ok(tape.value(loss).data()[0])
    })
}
