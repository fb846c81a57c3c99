//! Central-difference verification of recorded gradients.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Coordinates where both the analytic gradient and the numeric estimate are
/// at most this large are skipped: dead ReLU regions, and gradients that
/// vanish analytically but carry rounding noise of order `eps·|f|/step`.
pub const ZERO_GRAD_TOL: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input index, flat coordinate)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    pub skipped: usize,
}

/// Compares `backward` gradients of a scalar function against central
/// differences at `point`. Relative error uses `max(|a|, |n|, 1e-8)` as
/// denominator.
pub fn grad_check<F>(f: F, point: &[Tensor], step: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = point.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .map(|&v| tape.grad(v).cloned().ok_or_else(|| Error::Backward("missing gradient".into())))
        .collect::<Result<_>>()?;

    let eval = |pt: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = pt.iter().map(|x| t.constant(x.clone())).collect();
        let o = f(&mut t, &vs)?;
        Ok(t.value(o).item())
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        skipped: 0,
    };
    let mut probe: Vec<Tensor> = point.to_vec();
    for (ti, grad) in analytic.iter().enumerate() {
        for ci in 0..grad.len() {
            let orig = probe[ti].data()[ci];
            probe[ti].data_mut()[ci] = orig + step;
            let fp = eval(&probe)?;
            probe[ti].data_mut()[ci] = orig - step;
            let fm = eval(&probe)?;
            probe[ti].data_mut()[ci] = orig;
            let numeric = (fp - fm) / (2.0 * step);
            let a = grad.data()[ci];
            if a.abs() <= ZERO_GRAD_TOL && numeric.abs() <= ZERO_GRAD_TOL {
                report.skipped += 1;
                continue;
            }
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                if rel >= report.max_rel_error {
                    report.worst = Some((ti, ci));
                }
            }
        }
    }
    Ok(report)
}
