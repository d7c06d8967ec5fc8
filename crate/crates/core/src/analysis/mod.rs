//! Error metrics, spectra, noise, synthetic observations and the
//! estimation and denoising pipelines.

mod inverse;
mod observations;
mod spectrum;

pub use inverse::{denoise, estimate_parameters, laplacian_energy, DenoiseResult, Estimate};
pub use observations::{add_gaussian_noise, make_observations, NoiseModel, ObservationKind, ObservationSet, Provenance};
pub use spectrum::{band_error, error_spectrum, power_cutoff, BandRecord, ErrorSpectrum, SpectrumTracker};

use serde::Serialize;

use crate::error::{PicnError, Result};
use crate::grid::Field;
use crate::problems::ProblemDef;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ErrorMetrics {
    /// `||p - e|| / ||e||`; the absolute norm when `zero_reference` is set.
    pub l2_rel: f64,
    pub l_inf: f64,
    pub mse: f64,
    /// The reference had zero norm, so `l2_rel` is absolute.
    pub zero_reference: bool,
    /// Sum of squared differences.
    pub err_sq: f64,
    /// Sum of squared reference values.
    pub ref_sq: f64,
    pub count: usize,
}

fn metrics_from(pairs: impl Iterator<Item = (f64, f64)>) -> ErrorMetrics {
    let mut m = ErrorMetrics::default();
    for (p, e) in pairs {
        let d = p - e;
        m.err_sq += d * d;
        m.ref_sq += e * e;
        m.l_inf = m.l_inf.max(d.abs());
        m.count += 1;
    }
    if m.count > 0 {
        m.mse = m.err_sq / m.count as f64;
    }
    if m.ref_sq > 0.0 {
        m.l2_rel = (m.err_sq / m.ref_sq).sqrt();
    } else {
        m.zero_reference = true;
        m.l2_rel = m.err_sq.sqrt();
    }
    m
}

pub fn error_metrics(predicted: &Field, exact: &Field) -> Result<ErrorMetrics> {
    if predicted.dim() != exact.dim() {
        return Err(PicnError::Shape(format!(
            "predicted {:?} vs exact {:?}",
            predicted.dim(),
            exact.dim()
        )));
    }
    Ok(metrics_from(predicted.iter().copied().zip(exact.iter().copied())))
}

/// Metrics of channel `channel` of `u` against the problem's exact
/// solution at the given nodes. Without an exact solution the reference
/// is zero.
pub fn error_metrics_on(problem: &ProblemDef, u: &Field, channel: usize, nodes: &[(usize, usize)]) -> ErrorMetrics {
    let g = &problem.grid;
    metrics_from(nodes.iter().map(|&(i, j)| {
        let (x, y) = g.node(i, j);
        (u[[i, j]], problem.exact_value(x, y, channel).unwrap_or(0.0))
    }))
}

/// Exact solution of one channel sampled on the grid (zero when absent).
pub fn exact_field(problem: &ProblemDef, channel: usize) -> Field {
    problem
        .grid
        .sample(|x, y| problem.exact_value(x, y, channel).unwrap_or(0.0))
}

/// `u - exact` on the evaluation nodes and zero elsewhere.
pub fn error_field(problem: &ProblemDef, u: &Field, channel: usize) -> Field {
    let mut e = Field::zeros(u.dim());
    for (i, j) in problem.evaluation_nodes() {
        let (x, y) = problem.grid.node(i, j);
        e[[i, j]] = u[[i, j]] - problem.exact_value(x, y, channel).unwrap_or(0.0);
    }
    e
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn identical_fields_have_zero_error() {
        let a = array![[1.0, 2.0], [3.0, -4.0]];
        let m = error_metrics(&a, &a).unwrap();
        assert_eq!((m.l2_rel, m.l_inf, m.mse), (0.0, 0.0, 0.0));
        assert!(!m.zero_reference);
    }

    #[test]
    fn zero_reference_reports_absolute_norm() {
        let e = Field::zeros((1, 4));
        let p = Field::from_elem((1, 4), 0.5);
        let m = error_metrics(&p, &e).unwrap();
        assert!(m.zero_reference);
        assert_eq!(m.l_inf, 0.5);
        assert_eq!(m.mse, 0.25);
        assert_eq!(m.l2_rel, 1.0);
        let both = error_metrics(&e, &e).unwrap();
        assert_eq!(both.l2_rel, 0.0);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        assert!(error_metrics(&Field::zeros((2, 2)), &Field::zeros((2, 3))).is_err());
    }

    #[test]
    fn relative_error_value() {
        let p = array![[1.0, 0.0]];
        let e = array![[2.0, 0.0]];
        let m = error_metrics(&p, &e).unwrap();
        assert!((m.l2_rel - 0.5).abs() < 1e-15);
    }
}
