use crate::error::{PicnError, Result};
use crate::grid::{apply_stencil, derivative_kernel, Derivative, Field, GridSpec};
use crate::problems::ProblemDef;
use crate::training::{train, TrainObserver, TrainOutcome, TrainingConfig};

use super::ObservationSet;

#[derive(Debug, Clone)]
pub struct Estimate {
    /// `lambda_2 / lambda_1` after training.
    pub lambda_ratio: f64,
    pub lambda: Vec<f64>,
    pub field: Field,
    pub outcome: TrainOutcome,
}

/// Trains `problem` (which must have a trainable lambda) on `observations`
/// and reports the learned coefficient ratio.
pub fn estimate_parameters(
    problem: &ProblemDef,
    observations: &ObservationSet,
    config: &TrainingConfig,
    observer: &mut dyn TrainObserver,
) -> Result<Estimate> {
    if observations.points.is_empty() {
        return Err(PicnError::InvalidArgument("no observations to fit".into()));
    }
    if problem.lambda.len() < 2 || problem.lambda.num_trainable() == 0 {
        return Err(PicnError::InvalidArgument(format!(
            "problem `{}` has no trainable coefficient pair",
            problem.name
        )));
    }
    let mut p = problem.clone();
    p.observations = Some(observations.clone());
    let outcome = train(&p, config, observer)?;
    let lambda = outcome.state.lambda.values.clone();
    let field = outcome.state.fields()?.swap_remove(0);
    Ok(Estimate {
        lambda_ratio: lambda[1] / lambda[0],
        lambda,
        field,
        outcome,
    })
}

#[derive(Debug, Clone)]
pub struct DenoiseResult {
    pub field: Field,
    /// RMSE of the reconstruction against the clean values at the
    /// observation points.
    pub rmse_vs_clean: f64,
    /// RMSE of the noisy observations themselves.
    pub noisy_rmse: f64,
    /// Mean squared discrete Laplacian of the reconstruction.
    pub laplacian_energy: f64,
    /// Same for the noisy observations placed on the grid.
    pub noisy_laplacian_energy: f64,
    pub lambda: Vec<f64>,
    pub outcome: TrainOutcome,
}

/// Mean squared five-point Laplacian over the interior nodes.
pub fn laplacian_energy(field: &Field, grid: &GridSpec) -> Result<f64> {
    let k = derivative_kernel(Derivative::Laplace, grid.dx, grid.dy)?;
    let lap = apply_stencil(field, &k)?;
    Ok(lap.iter().map(|v| v * v).sum::<f64>() / lap.len() as f64)
}

/// Observations placed at their nearest grid nodes.
fn observations_on_grid(obs: &ObservationSet, grid: &GridSpec) -> Field {
    let mut f = Field::zeros(grid.shape());
    for &(x, y, v) in &obs.points {
        let j = (((x - grid.x_min) / grid.dx).round().max(0.0) as usize).min(grid.nx - 1);
        let i = if grid.ny == 1 {
            0
        } else {
            (((y - grid.y_min) / grid.dy).round().max(0.0) as usize).min(grid.ny - 1)
        };
        f[[i, j]] = v;
    }
    f
}

/// Fits the problem's physics to its (noisy) observations and measures
/// the reconstruction against the clean values.
pub fn denoise(problem: &ProblemDef, config: &TrainingConfig, observer: &mut dyn TrainObserver) -> Result<DenoiseResult> {
    let obs = problem
        .observations
        .as_ref()
        .ok_or_else(|| PicnError::InvalidArgument(format!("problem `{}` has no observations", problem.name)))?;
    if obs.clean.len() != obs.points.len() || obs.points.is_empty() {
        return Err(PicnError::InvalidArgument("denoising needs clean reference values".into()));
    }
    let outcome = train(problem, config, observer)?;
    let field = outcome.state.fields()?.swap_remove(0);
    let grid = &problem.grid;
    let n = obs.points.len() as f64;
    let (mut se, mut se_noisy) = (0.0, 0.0);
    for (&(x, y, v), &c) in obs.points.iter().zip(&obs.clean) {
        let st = crate::geometry::interp_stencil(grid, x, y)?;
        let u = crate::geometry::interp_apply(&field, &st)?;
        se += (u - c).powi(2);
        se_noisy += (v - c).powi(2);
    }
    Ok(DenoiseResult {
        rmse_vs_clean: (se / n).sqrt(),
        noisy_rmse: (se_noisy / n).sqrt(),
        laplacian_energy: laplacian_energy(&field, grid)?,
        noisy_laplacian_energy: laplacian_energy(&observations_on_grid(obs, grid), grid)?,
        lambda: outcome.state.lambda.values.clone(),
        field,
        outcome,
    })
}
