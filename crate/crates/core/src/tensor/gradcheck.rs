//! Central-difference verification of analytic gradients.

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of comparing analytic and numerical gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Flat index of the worst element.
    pub worst_index: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// Below this magnitude both gradients count as zero and only the absolute
/// difference is used.
const REL_FLOOR: f64 = 1e-8;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_FLOOR);
    (analytic - numeric).abs() / denom
}

/// `(f(x + h) - f(x - h)) / 2h`.
pub fn central_difference(mut f: impl FnMut(f64) -> Result<f64>, x: f64, step: f64) -> Result<f64> {
    let plus = f(x + step)?;
    let minus = f(x - step)?;
    Ok((plus - minus) / (2.0 * step))
}

/// Central difference at `step`, or `None` when it disagrees with the one at
/// `step / 2` by more than `tol` (relative): the interval then straddles a
/// kink such as a ReLU switching, and the point is unusable.
pub fn smooth_central_difference(
    mut f: impl FnMut(f64) -> Result<f64>,
    x: f64,
    step: f64,
    tol: f64,
) -> Result<Option<f64>> {
    let wide = central_difference(&mut f, x, step)?;
    let narrow = central_difference(&mut f, x, step / 2.0)?;
    Ok((relative_error(wide, narrow) <= tol).then_some(wide))
}

/// Accumulates per-element comparisons into a report.
#[derive(Debug, Clone)]
pub struct GradCheckAccumulator {
    tolerance: f64,
    checked: usize,
    max_rel: f64,
    max_abs: f64,
    worst: usize,
}

impl GradCheckAccumulator {
    pub fn new(tolerance: f64) -> Self {
        GradCheckAccumulator {
            tolerance,
            checked: 0,
            max_rel: 0.0,
            max_abs: 0.0,
            worst: 0,
        }
    }

    pub fn push(&mut self, index: usize, analytic: f64, numeric: f64) {
        let rel = relative_error(analytic, numeric);
        if rel > self.max_rel || self.checked == 0 {
            self.worst = index;
        }
        self.max_rel = self.max_rel.max(rel);
        self.max_abs = self.max_abs.max((analytic - numeric).abs());
        self.checked += 1;
    }

    pub fn finish(self) -> GradCheckReport {
        GradCheckReport {
            checked: self.checked,
            max_rel_error: self.max_rel,
            max_abs_error: self.max_abs,
            worst_index: self.worst,
            tolerance: self.tolerance,
            passed: self.max_rel <= self.tolerance,
        }
    }
}

/// Checks every element of `input`; see [`grad_check_at`].
pub fn grad_check<F>(function: F, input: &Tensor<f64>, step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: for<'t> Fn(Var<'t, f64>) -> Result<Var<'t, f64>>,
{
    let all: Vec<usize> = (0..input.numel()).collect();
    grad_check_at(function, input, &all, step, tol)
}

/// Compares the tape gradient of a scalar-valued `function` with central
/// differences at the given flat indices of `input`.
pub fn grad_check_at<F>(
    function: F,
    input: &Tensor<f64>,
    indices: &[usize],
    step: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    F: for<'t> Fn(Var<'t, f64>) -> Result<Var<'t, f64>>,
{
    let tape = Tape::new();
    let x = tape.input(input.clone());
    let y = function(x)?;
    let grads = tape.backward(y)?;
    let zeros = Tensor::zeros(input.shape());
    let analytic = grads.wrt(x).unwrap_or(&zeros);

    let eval = |probe: &Tensor<f64>| -> Result<f64> {
        let tape = Tape::new();
        let y = function(tape.input(probe.clone()))?;
        y.value().item()
    };
    let mut acc = GradCheckAccumulator::new(tol);
    let mut probe = input.clone();
    for &i in indices {
        if i >= input.numel() {
            return Err(Error::Contract(format!("grad_check index {i} out of range")));
        }
        let x0 = input.data()[i];
        let numeric = central_difference(
            |v| {
                probe.data_mut()[i] = v;
                eval(&probe)
            },
            x0,
            step,
        )?;
        probe.data_mut()[i] = x0;
        acc.push(i, analytic.data()[i], numeric);
    }
    Ok(acc.finish())
}
