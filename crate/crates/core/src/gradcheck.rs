//! Central finite-difference checks of tape gradients.

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Denominator floor: entries smaller than this are judged on absolute error
/// scaled by the floor, since finite differences cannot resolve them relatively.
pub const ABS_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Worst of `|a - n| / max(|a|, |n|, ABS_FLOOR)` over checked entries.
    pub max_error: f64,
    /// `(input index, flat element, analytic, numeric)` at the worst entry.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_error < tol
    }
}

pub fn entry_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ABS_FLOOR)
}

/// Compares reverse-mode gradients of the scalar `f(inputs)` against
/// five-point central differences with the given step. `max_per_input` bounds the number of
/// entries probed per input (evenly strided); `None` probes all of them.
pub fn check<F>(
    inputs: &[Tensor],
    f: F,
    step: f64,
    max_per_input: Option<usize>,
) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let analytic = {
        let tape = Tape::with_finite_checks(true);
        let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.param(t)).collect();
        let loss = f(&tape, &vars)?;
        let g = tape.backward(loss)?;
        vars.iter().map(|v| g.wrt(*v)).collect::<Vec<_>>()
    };
    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let tape = Tape::with_finite_checks(true);
        let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.constant(t)).collect();
        Ok(f(&tape, &vars)?.value().item())
    };

    let mut report = GradCheckReport {
        max_error: 0.0,
        worst: None,
        checked: 0,
    };
    let mut work = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let n = input.numel();
        let stride = max_per_input.map_or(1, |m| n.div_ceil(m.max(1)).max(1));
        for j in (0..n).step_by(stride) {
            let mut at = |offset: f64| -> Result<f64> {
                let mut shifted = input.to_vec();
                shifted[j] += offset;
                work[i] = Tensor::new(input.shape().to_vec(), shifted)?;
                let v = eval(&work);
                work[i] = input.clone();
                v
            };
            // fourth-order central stencil
            let numeric = (at(-2.0 * step)? - 8.0 * at(-step)? + 8.0 * at(step)? - at(2.0 * step)?)
                / (12.0 * step);
            let a = analytic[i].data()[j];
            let err = entry_error(a, numeric);
            report.checked += 1;
            if err > report.max_error || report.worst.is_none() {
                report.max_error = report.max_error.max(err);
                if err >= report.max_error {
                    report.worst = Some((i, j, a, numeric));
                }
            }
        }
    }
    Ok(report)
}
