//! Central finite-difference checking of tape gradients.

use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};

/// Step used for central differences.
pub const FD_STEP: f64 = 1e-4;
/// Relative tolerance between analytic and numeric derivatives.
pub const REL_TOL: f64 = 1e-3;
/// Absolute tolerance floor.
pub const ABS_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub failures: usize,
    /// Largest `|analytic - numeric| / max(REL_TOL * scale, ABS_TOL)` seen; `<= 1` passes.
    pub worst_ratio: f64,
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// `|a - n| <= max(REL_TOL * max(|a|, |n|), ABS_TOL)`.
pub fn within_tolerance(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= (REL_TOL * analytic.abs().max(numeric.abs())).max(ABS_TOL)
}

/// Compares `backward` against central differences for every element of
/// every input. `f` receives a fresh tape with the inputs registered as
/// tracked leaves and must return a scalar.
pub fn check<F>(inputs: &[Tensor], f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| tape.grad(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape().to_vec())))
        .collect();

    let eval = |probe: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = probe.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        tape.value(out).item().ok_or_else(|| Error::InvalidLoss("non-scalar output".into()))
    };

    let mut report = GradCheckReport { checked: 0, failures: 0, worst_ratio: 0.0, worst: None };
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for (ti, input) in inputs.iter().enumerate() {
        for ei in 0..input.numel() {
            let x0 = input.data()[ei];
            probe[ti].data_mut()[ei] = x0 + FD_STEP;
            let plus = eval(&probe)?;
            probe[ti].data_mut()[ei] = x0 - FD_STEP;
            let minus = eval(&probe)?;
            probe[ti].data_mut()[ei] = x0;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = analytic[ti].data()[ei];
            let allowed = (REL_TOL * a.abs().max(numeric.abs())).max(ABS_TOL);
            let ratio = (a - numeric).abs() / allowed;
            report.checked += 1;
            if ratio > 1.0 {
                report.failures += 1;
            }
            if ratio > report.worst_ratio {
                report.worst_ratio = ratio;
                report.worst = Some((ti, ei, a, numeric));
            }
        }
    }
    Ok(report)
}
