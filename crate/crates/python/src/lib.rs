//! Python bindings: problems, training, gradient checks, estimation,
//! denoising and spectra.

use std::collections::BTreeMap;

use pyo3::exceptions::{PyKeyError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use picn_core::analysis::{self, ErrorSpectrum};
use picn_core::grid::Field;
use picn_core::problems::{self, ProblemDef, ProblemParams};
use picn_core::training::{self, PicnState, TrainOutcome, TrainingConfig};
use picn_core::PicnError;

fn py_err(e: PicnError) -> PyErr {
    match e {
        PicnError::UnknownProblem { .. } | PicnError::UnknownParameter { .. } => PyKeyError::new_err(e.to_string()),
        PicnError::Diverged { .. } | PicnError::Io(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn rows(f: &Field) -> Vec<Vec<f64>> {
    f.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn from_rows(data: Vec<Vec<f64>>) -> PyResult<Field> {
    let ncols = data.first().map_or(0, Vec::len);
    if ncols == 0 || data.iter().any(|r| r.len() != ncols) {
        return Err(PyValueError::new_err("expected a non-empty rectangular list of rows"));
    }
    let nrows = data.len();
    Field::from_shape_vec((nrows, ncols), data.into_iter().flatten().collect())
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

/// A builtin problem with its resolved parameters.
#[pyclass(name = "Problem", module = "picn", skip_from_py_object)]
#[derive(Clone)]
struct PyProblem {
    inner: ProblemDef,
}

#[pymethods]
impl PyProblem {
    #[new]
    #[pyo3(signature = (name, params = None))]
    fn new(name: &str, params: Option<BTreeMap<String, f64>>) -> PyResult<Self> {
        let params: ProblemParams = params.unwrap_or_default();
        problems::get_problem(name, &params).map(|inner| Self { inner }).map_err(py_err)
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    /// `(rows, cols)` of the solution grid.
    #[getter]
    fn grid_shape(&self) -> (usize, usize) {
        self.inner.grid.shape()
    }

    #[getter]
    fn channels(&self) -> usize {
        self.inner.channels()
    }

    #[getter]
    fn params(&self) -> BTreeMap<String, f64> {
        self.inner.params.clone()
    }

    #[getter]
    fn has_exact(&self) -> bool {
        self.inner.exact.is_some()
    }

    #[getter]
    fn num_boundary_samples(&self) -> usize {
        self.inner.boundary.len()
    }

    #[getter]
    fn num_collocation_points(&self) -> usize {
        self.inner.collocation_nodes().len()
    }

    /// Builtin training defaults of this problem.
    fn default_config(&self) -> PyTrainingConfig {
        PyTrainingConfig {
            inner: self.inner.training.clone(),
        }
    }

    /// Exact solution of one channel on the grid, or `None`.
    #[pyo3(signature = (channel = 0))]
    fn exact_field(&self, channel: usize) -> PyResult<Option<Vec<Vec<f64>>>> {
        if channel >= self.inner.channels() {
            return Err(PyValueError::new_err(format!("channel {channel} out of range")));
        }
        Ok(self
            .inner
            .exact
            .is_some()
            .then(|| rows(&analysis::exact_field(&self.inner, channel))))
    }

    fn __repr__(&self) -> String {
        let (r, c) = self.inner.grid.shape();
        format!("Problem(name='{}', grid=({r}, {c}), channels={})", self.inner.name, self.inner.channels())
    }
}

#[pyclass(name = "TrainingConfig", module = "picn", from_py_object)]
#[derive(Clone)]
struct PyTrainingConfig {
    inner: TrainingConfig,
}

#[pymethods]
impl PyTrainingConfig {
    #[new]
    #[pyo3(signature = (learning_rate = 1e-3, epochs = 1000, k_r = 0.5, k_g = 0.5, seed = 0, log_every = 100))]
    fn new(learning_rate: f64, epochs: usize, k_r: f64, k_g: f64, seed: u64, log_every: usize) -> PyResult<Self> {
        let inner = TrainingConfig {
            learning_rate,
            epochs,
            k_r,
            k_g,
            seed,
            log_every,
            ..TrainingConfig::default()
        };
        inner.validate().map_err(py_err)?;
        Ok(Self { inner })
    }

    /// Sets the loss weights from a governing:boundary ratio.
    fn set_ratio(&mut self, governing: f64, boundary: f64) {
        self.inner.set_ratio(governing, boundary);
    }

    #[getter]
    fn learning_rate(&self) -> f64 {
        self.inner.learning_rate
    }
    #[setter]
    fn set_learning_rate(&mut self, v: f64) {
        self.inner.learning_rate = v;
    }
    #[getter]
    fn epochs(&self) -> usize {
        self.inner.epochs
    }
    #[setter]
    fn set_epochs(&mut self, v: usize) {
        self.inner.epochs = v;
    }
    #[getter]
    fn k_r(&self) -> f64 {
        self.inner.k_r
    }
    #[setter]
    fn set_k_r(&mut self, v: f64) {
        self.inner.k_r = v;
    }
    #[getter]
    fn k_g(&self) -> f64 {
        self.inner.k_g
    }
    #[setter]
    fn set_k_g(&mut self, v: f64) {
        self.inner.k_g = v;
    }
    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }
    #[setter]
    fn set_seed(&mut self, v: u64) {
        self.inner.seed = v;
    }
    #[getter]
    fn log_every(&self) -> usize {
        self.inner.log_every
    }
    #[setter]
    fn set_log_every(&mut self, v: usize) {
        self.inner.log_every = v;
    }

    fn __repr__(&self) -> String {
        let c = &self.inner;
        format!(
            "TrainingConfig(learning_rate={}, epochs={}, k_r={}, k_g={}, seed={}, log_every={})",
            c.learning_rate, c.epochs, c.k_r, c.k_g, c.seed, c.log_every
        )
    }
}

/// Result of a training run.
#[pyclass(name = "TrainResult", module = "picn", get_all)]
struct PyTrainResult {
    /// Per-channel fields on the grid.
    fields: Vec<Vec<Vec<f64>>>,
    rel_l2: Option<Vec<f64>>,
    rel_l2_total: Option<f64>,
    final_loss: f64,
    /// `(epoch, total, l_g, l_r1, l_r2, l_obs)` per logged epoch.
    history: Vec<(usize, f64, f64, f64, f64, f64)>,
    /// Operator coefficients after training.
    lambda_values: Vec<f64>,
    checkpoint: String,
}

impl PyTrainResult {
    fn from_outcome(o: &TrainOutcome) -> PyResult<Self> {
        let fields = o.state.fields().map_err(py_err)?;
        Ok(Self {
            fields: fields.iter().map(rows).collect(),
            rel_l2: o.rel_l2.clone(),
            rel_l2_total: o.rel_l2_total,
            final_loss: o.final_loss.total,
            history: o
                .history
                .iter()
                .map(|r| (r.epoch, r.loss.total, r.loss.l_g, r.loss.l_r1, r.loss.l_r2, r.loss.l_obs))
                .collect(),
            lambda_values: o.state.lambda.values.clone(),
            checkpoint: picn_core::cli::checkpoint_text(&o.state),
        })
    }
}

fn config_or_default(problem: &PyProblem, config: Option<PyTrainingConfig>) -> TrainingConfig {
    config.map_or_else(|| problem.inner.training.clone(), |c| c.inner)
}

/// Trains the generator on a problem. Uses the problem's defaults when no
/// config is given.
#[pyfunction]
#[pyo3(signature = (problem, config = None))]
fn train(py: Python<'_>, problem: &PyProblem, config: Option<PyTrainingConfig>) -> PyResult<PyTrainResult> {
    let cfg = config_or_default(problem, config);
    let outcome = py
        .detach(|| training::train(&problem.inner, &cfg, &mut ()))
        .map_err(py_err)?;
    PyTrainResult::from_outcome(&outcome)
}

/// Checks analytic gradients at a random initial state against finite
/// differences. Returns `(passed, max_rel_err, [(name, analytic, numeric, rel_err)])`.
#[pyfunction]
#[pyo3(signature = (problem, seed = 0, tolerance = 1e-5))]
fn grad_check(
    py: Python<'_>,
    problem: &PyProblem,
    seed: u64,
    tolerance: f64,
) -> PyResult<(bool, f64, Vec<(String, f64, f64, f64)>)> {
    let p = &problem.inner;
    let report = py
        .detach(|| {
            let state = PicnState::init_random(p, seed)?;
            training::grad_check(p, &state, &p.training, tolerance)
        })
        .map_err(py_err)?;
    let entries = report
        .entries
        .into_iter()
        .map(|e| (e.name, e.analytic, e.numeric, e.rel_err))
        .collect();
    Ok((report.passed, report.max_rel_err, entries))
}

/// Learns the coefficient ratio of a problem carrying observations.
/// Returns `(lambda_ratio, result)`.
#[pyfunction]
#[pyo3(signature = (problem, config = None))]
fn estimate(py: Python<'_>, problem: &PyProblem, config: Option<PyTrainingConfig>) -> PyResult<(f64, PyTrainResult)> {
    let p = &problem.inner;
    let obs = p
        .observations
        .clone()
        .ok_or_else(|| PyValueError::new_err(format!("problem `{}` has no observations", p.name)))?;
    let cfg = config_or_default(problem, config);
    let est = py
        .detach(|| analysis::estimate_parameters(p, &obs, &cfg, &mut ()))
        .map_err(py_err)?;
    Ok((est.lambda_ratio, PyTrainResult::from_outcome(&est.outcome)?))
}

/// Reconstructs a field from noisy observations. Returns
/// `(rmse_vs_clean, noisy_rmse, laplacian_energy, noisy_laplacian_energy, result)`.
#[pyfunction]
#[pyo3(signature = (problem, config = None))]
fn denoise(
    py: Python<'_>,
    problem: &PyProblem,
    config: Option<PyTrainingConfig>,
) -> PyResult<(f64, f64, f64, f64, PyTrainResult)> {
    let cfg = config_or_default(problem, config);
    let r = py
        .detach(|| analysis::denoise(&problem.inner, &cfg, &mut ()))
        .map_err(py_err)?;
    Ok((
        r.rmse_vs_clean,
        r.noisy_rmse,
        r.laplacian_energy,
        r.noisy_laplacian_energy,
        PyTrainResult::from_outcome(&r.outcome)?,
    ))
}

/// Power spectrum of a field given as rows.
#[pyclass(name = "Spectrum", module = "picn", get_all)]
struct PySpectrum {
    freq_x: Vec<f64>,
    freq_y: Option<Vec<f64>>,
    power: Vec<f64>,
    total_power: f64,
    mean_square: f64,
}

#[pymethods]
impl PySpectrum {
    fn band_power(&self, lo: f64, hi: f64) -> f64 {
        self.as_core().band_power(lo, hi)
    }

    fn parseval_error(&self) -> f64 {
        self.as_core().parseval_error()
    }
}

impl PySpectrum {
    fn as_core(&self) -> ErrorSpectrum {
        ErrorSpectrum {
            freq_x: self.freq_x.clone(),
            freq_y: self.freq_y.clone(),
            power: self.power.clone(),
            total_power: self.total_power,
            mean_square: self.mean_square,
        }
    }
}

#[pyfunction]
fn error_spectrum(field: Vec<Vec<f64>>) -> PyResult<PySpectrum> {
    let s = analysis::error_spectrum(&from_rows(field)?);
    Ok(PySpectrum {
        freq_x: s.freq_x,
        freq_y: s.freq_y,
        power: s.power,
        total_power: s.total_power,
        mean_square: s.mean_square,
    })
}

#[pyfunction]
fn list_problems() -> Vec<String> {
    problems::builtin_names()
}

#[pymodule]
fn picn(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyProblem>()?;
    m.add_class::<PyTrainingConfig>()?;
    m.add_class::<PyTrainResult>()?;
    m.add_class::<PySpectrum>()?;
    m.add_function(wrap_pyfunction!(list_problems, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(grad_check, m)?)?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(denoise, m)?)?;
    m.add_function(wrap_pyfunction!(error_spectrum, m)?)?;
    Ok(())
}
