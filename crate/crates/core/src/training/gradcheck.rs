use crate::error::Result;
use crate::problems::ProblemDef;

use super::{loss_contributions, total_gradient, CollocationSets, PicnState, StateGradients, TrainingConfig};

/// Plain central-difference step.
pub const FD_STEP: f64 = 1e-6;

/// Gradients below this magnitude are compared absolutely.
pub const ABS_FLOOR: f64 = 1e-8;

/// Finite-difference estimate used as the oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FdScheme {
    /// `(L(p + h) - L(p - h)) / 2h`.
    Central { step: f64 },
    /// Central differences at `h` and `h / 2` combined to cancel the
    /// `h^2` error term: `(4 D(h/2) - D(h)) / 3`.
    Richardson { step: f64 },
}

impl Default for FdScheme {
    fn default() -> Self {
        Self::Richardson { step: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub name: String,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub tolerance: f64,
    pub max_rel_err: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn failures(&self) -> impl Iterator<Item = &GradCheckEntry> {
        self.entries.iter().filter(move |e| !(e.rel_err < self.tolerance))
    }

    pub fn worst(&self) -> Option<&GradCheckEntry> {
        self.entries.iter().max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }
}

/// `|a - f| / max(|a|, |f|)`, or the absolute difference when both are tiny.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    let diff = (analytic - numeric).abs();
    if scale <= ABS_FLOOR {
        diff
    } else {
        diff / scale
    }
}

/// Compares the analytic gradient of every trainable parameter against
/// finite differences of the loss, using the default scheme.
pub fn grad_check(problem: &ProblemDef, state: &PicnState, config: &TrainingConfig, tolerance: f64) -> Result<GradCheckReport> {
    grad_check_with(problem, state, config, tolerance, FdScheme::default(), &mut |_| {})
}

/// Full-control variant: picks the difference scheme and lets the caller
/// tamper with the analytic gradients before comparison.
///
/// Loss differences are summed point by point. This is the same quotient
/// as differencing two totals, but small terms are not lost to rounding
/// of large ones.
pub fn grad_check_with(
    problem: &ProblemDef,
    state: &PicnState,
    config: &TrainingConfig,
    tolerance: f64,
    scheme: FdScheme,
    tamper: &mut dyn FnMut(&mut StateGradients),
) -> Result<GradCheckReport> {
    let sets = CollocationSets::build(problem)?;
    let mut result = total_gradient(problem, &sets, state, config)?;
    tamper(&mut result.grads);
    let analytic = result.grads.flatten(state);
    let names = state.param_names();
    let base = state.flatten();
    let mut probe = state.clone();
    let mut flat = base.clone();

    let mut central = |k: usize, h: f64| -> Result<f64> {
        flat[k] = base[k] + h;
        probe.unflatten(&flat);
        let plus = loss_contributions(problem, &sets, &probe, config)?;
        flat[k] = base[k] - h;
        probe.unflatten(&flat);
        let minus = loss_contributions(problem, &sets, &probe, config)?;
        flat[k] = base[k];
        let diff: f64 = plus.iter().zip(&minus).map(|(p, m)| p - m).sum();
        Ok(diff / (2.0 * h))
    };

    let mut entries = Vec::with_capacity(base.len());
    for k in 0..base.len() {
        let numeric = match scheme {
            FdScheme::Central { step } => central(k, step)?,
            FdScheme::Richardson { step } => {
                let coarse = central(k, step)?;
                let fine = central(k, 0.5 * step)?;
                (4.0 * fine - coarse) / 3.0
            }
        };
        entries.push(GradCheckEntry {
            name: names[k].clone(),
            analytic: analytic[k],
            numeric,
            rel_err: relative_error(analytic[k], numeric),
        });
    }
    let max_rel_err = entries.iter().map(|e| e.rel_err).fold(0.0, f64::max);
    let passed = entries.iter().all(|e| e.rel_err < tolerance);
    Ok(GradCheckReport {
        entries,
        tolerance,
        max_rel_err,
        passed,
    })
}
