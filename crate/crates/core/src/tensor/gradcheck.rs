use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of comparing tape gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic − numeric| / max(1, |numeric|)` over all coordinates.
    pub max_rel_error: f64,
    /// Same maximum, per input (0 for inputs without `requires_grad`).
    pub per_input: Vec<f64>,
    pub coordinates: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// Checks the gradient of the scalar built by `f` with respect to every input
/// that has `requires_grad` set, using `(f(θ+h) − f(θ−h)) / 2h`.
///
/// `f` receives a fresh tape with the inputs already pushed as leaves.
pub fn finite_diff_check<F>(
    f: F,
    inputs: &[Tensor<f64>],
    h: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    finite_diff_check_with(f, inputs, h, tolerance, false)
}

/// [`finite_diff_check`] with an optional sign flip applied to the analytic
/// gradient, used to confirm the harness actually detects wrong gradients.
pub fn finite_diff_check_with<F>(
    f: F,
    inputs: &[Tensor<f64>],
    h: f64,
    tolerance: f64,
    flip_analytic: bool,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {h}")));
    }
    let evaluate = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        tape.scalar(out)
            .ok_or_else(|| Error::Autodiff("checked function must return a scalar".into()))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    let analytic: Vec<Option<Vec<f64>>> = vars
        .iter()
        .map(|&v| tape.grad(v).map(<[f64]>::to_vec))
        .collect();

    let mut per_input = vec![0.0; inputs.len()];
    let mut coordinates = 0;
    let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
    for (idx, grad) in analytic.iter().enumerate() {
        let Some(grad) = grad else { continue };
        for coord in 0..grad.len() {
            let original = inputs[idx].data()[coord];
            probe[idx].data_mut()[coord] = original + h;
            let plus = evaluate(&probe)?;
            probe[idx].data_mut()[coord] = original - h;
            let minus = evaluate(&probe)?;
            probe[idx].data_mut()[coord] = original;

            let numeric = (plus - minus) / (2.0 * h);
            let a = if flip_analytic { -grad[coord] } else { grad[coord] };
            let err = (a - numeric).abs() / numeric.abs().max(1.0);
            per_input[idx] = f64::max(per_input[idx], err);
            coordinates += 1;
        }
    }
    Ok(GradCheckReport {
        max_rel_error: per_input.iter().copied().fold(0.0, f64::max),
        per_input,
        coordinates,
        tolerance,
    })
}
