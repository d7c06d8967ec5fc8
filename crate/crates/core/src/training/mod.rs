//! Loss assembly, exact gradients, Adam and the training loop.

mod adam;
mod gradcheck;
mod loss;

pub use adam::{adam_step, AdamState};
pub use gradcheck::{
    grad_check, grad_check_with, relative_error, FdScheme, GradCheckEntry, GradCheckReport, ABS_FLOOR, FD_STEP,
};
pub use loss::{
    assemble_loss, loss_contributions, loss_of_fields, total_gradient, CollocationSets, FluxSample, GradientResult, LossBreakdown,
    StateGradients, ValueSample,
};

use serde::{Deserialize, Serialize};

use crate::analysis::error_metrics_on;
use crate::error::{PicnError, Result};
use crate::generator::{init_params, PicnModel};
use crate::grid::Field;
use crate::problems::{ProblemDef, MAX_LAMBDA};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    /// Boundary loss weight.
    pub k_r: f64,
    /// Governing-equation loss weight.
    pub k_g: f64,
    /// Observation loss weight; defaults to `k_r`.
    pub k_obs: Option<f64>,
    pub seed: u64,
    pub log_every: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 1000,
            k_r: 0.5,
            k_g: 0.5,
            k_obs: None,
            seed: 0,
            log_every: 100,
        }
    }
}

impl TrainingConfig {
    /// Weights from a governing:boundary ratio `a:b`, i.e.
    /// `k_g = a / (a + b)` and `k_r = b / (a + b)`.
    pub fn from_ratio(governing: f64, boundary: f64, learning_rate: f64, epochs: usize) -> Self {
        let total = governing + boundary;
        Self {
            learning_rate,
            epochs,
            k_g: governing / total,
            k_r: boundary / total,
            ..Self::default()
        }
    }

    pub fn set_ratio(&mut self, governing: f64, boundary: f64) {
        let total = governing + boundary;
        self.k_g = governing / total;
        self.k_r = boundary / total;
    }

    pub fn k_obs(&self) -> f64 {
        self.k_obs.unwrap_or(self.k_r)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PicnError::InvalidConfig(m));
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0) || !(self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad("beta1 and beta2 must lie in (0, 1)".into());
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive".into());
        }
        if self.epochs < 1 {
            return bad("epochs must be at least 1".into());
        }
        if self.log_every < 1 {
            return bad("log_every must be at least 1".into());
        }
        if !(self.k_r >= 0.0 && self.k_g >= 0.0) || self.k_r + self.k_g == 0.0 {
            return bad("k_r and k_g must be nonnegative and not both zero".into());
        }
        if let Some(k) = self.k_obs {
            if !(k >= 0.0) {
                return bad("k_obs must be nonnegative".into());
            }
        }
        Ok(())
    }
}

/// Operator coefficients with a per-entry freeze mask.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainableLambda {
    pub values: Vec<f64>,
    pub frozen: Vec<bool>,
}

impl TrainableLambda {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn new(values: Vec<f64>, frozen: Vec<bool>) -> Result<Self> {
        if values.len() != frozen.len() || values.len() > MAX_LAMBDA {
            return Err(PicnError::InvalidArgument(format!(
                "lambda needs matching values/mask of length <= {MAX_LAMBDA}"
            )));
        }
        Ok(Self { values, frozen })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn trainable(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.values.len()).filter(|&i| !self.frozen[i])
    }

    pub fn num_trainable(&self) -> usize {
        self.trainable().count()
    }
}

/// Everything that is optimized: one generator per channel plus lambda.
#[derive(Debug, Clone, PartialEq)]
pub struct PicnState {
    pub models: Vec<PicnModel>,
    pub lambda: TrainableLambda,
}

impl PicnState {
    /// Fresh generators sized so their output covers the problem grid.
    pub fn init(problem: &ProblemDef, seed: u64) -> Result<Self> {
        Self::init_scaled(problem, seed, problem.hidden_init_scale)
    }

    /// Like [`PicnState::init`] but always with a fully random hidden field,
    /// so every parameter gets a generic gradient. Used for gradient checks.
    pub fn init_random(problem: &ProblemDef, seed: u64) -> Result<Self> {
        Self::init_scaled(problem, seed, 1.0)
    }

    fn init_scaled(problem: &ProblemDef, seed: u64, hidden_scale: f64) -> Result<Self> {
        let (m, n) = problem.hidden_shape();
        let (p, q) = problem.kernel;
        let models = (0..problem.channels())
            .map(|c| {
                let mut model = init_params(m, n, p, q, problem.activation, channel_seed(seed, c))?;
                model.w_h *= hidden_scale;
                Ok(model)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            models,
            lambda: problem.lambda.clone(),
        })
    }

    pub fn num_params(&self) -> usize {
        self.models.iter().map(PicnModel::num_params).sum::<usize>() + self.lambda.num_trainable()
    }

    /// Trainable parameters in a fixed order: per model `w_h`, `b_h`,
    /// `w_o`, `b_o`; then the unfrozen lambda entries.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for m in &self.models {
            out.extend(m.w_h.iter());
            out.push(m.b_h);
            out.extend(m.w_o.iter());
            out.push(m.b_o);
        }
        out.extend(self.lambda.trainable().map(|i| self.lambda.values[i]));
        out
    }

    pub fn unflatten(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params(), "flat parameter length");
        let mut k = 0;
        for m in &mut self.models {
            for w in m.w_h.iter_mut() {
                *w = flat[k];
                k += 1;
            }
            m.b_h = flat[k];
            k += 1;
            for w in m.w_o.iter_mut() {
                *w = flat[k];
                k += 1;
            }
            m.b_o = flat[k];
            k += 1;
        }
        let idx: Vec<usize> = self.lambda.trainable().collect();
        for i in idx {
            self.lambda.values[i] = flat[k];
            k += 1;
        }
    }

    /// Human-readable name of each flattened parameter.
    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.num_params());
        for (c, m) in self.models.iter().enumerate() {
            let (r, s) = m.w_h.dim();
            for i in 0..r {
                for j in 0..s {
                    out.push(format!("model{c}.w_h[{i},{j}]"));
                }
            }
            out.push(format!("model{c}.b_h"));
            let (r, s) = m.w_o.dim();
            for i in 0..r {
                for j in 0..s {
                    out.push(format!("model{c}.w_o[{i},{j}]"));
                }
            }
            out.push(format!("model{c}.b_o"));
        }
        out.extend(self.lambda.trainable().map(|i| format!("lambda[{i}]")));
        out
    }

    /// Generator outputs, one field per channel.
    pub fn fields(&self) -> Result<Vec<Field>> {
        self.models.iter().map(|m| m.forward().map(|(_, u)| u)).collect()
    }
}

fn channel_seed(seed: u64, channel: usize) -> u64 {
    seed ^ (channel as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

impl StateGradients {
    /// Gradient in the order of [`PicnState::flatten`].
    pub fn flatten(&self, state: &PicnState) -> Vec<f64> {
        let mut out = Vec::with_capacity(state.num_params());
        for g in &self.models {
            out.extend(g.g_w_h.iter());
            out.push(g.g_b_h);
            out.extend(g.g_w_o.iter());
            out.push(g.g_b_o);
        }
        out.extend(state.lambda.trainable().map(|i| self.lambda[i]));
        out
    }
}

/// One logged epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: LossBreakdown,
    /// Relative L2 error over all channels, when an exact solution exists.
    pub rel_l2: Option<f64>,
}

/// Receives every logged epoch during [`train`].
pub trait TrainObserver {
    fn on_record(&mut self, _record: &EpochRecord, _state: &PicnState, _fields: &[Field]) -> Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: PicnState,
    pub history: Vec<EpochRecord>,
    pub final_loss: LossBreakdown,
    /// Per-channel relative L2 error on the evaluation nodes.
    pub rel_l2: Option<Vec<f64>>,
    /// Combined relative L2 error over all channels.
    pub rel_l2_total: Option<f64>,
}

/// Relative L2 errors `(per channel, combined)` of `fields` against the
/// problem's exact solution on its evaluation nodes.
pub fn relative_errors(problem: &ProblemDef, fields: &[Field]) -> Option<(Vec<f64>, f64)> {
    problem.exact.as_ref()?;
    let nodes = problem.evaluation_nodes();
    let mut per = Vec::with_capacity(fields.len());
    let (mut num, mut den) = (0.0, 0.0);
    for (c, u) in fields.iter().enumerate() {
        let m = error_metrics_on(problem, u, c, &nodes);
        per.push(m.l2_rel);
        num += m.err_sq;
        den += m.ref_sq;
    }
    let total = if den > 0.0 { (num / den).sqrt() } else { num.sqrt() };
    Some((per, total))
}

/// Full-batch training with Adam. Epoch `e` is recorded after `e` updates,
/// every `log_every` epochs and at the last epoch.
pub fn train(problem: &ProblemDef, config: &TrainingConfig, observer: &mut dyn TrainObserver) -> Result<TrainOutcome> {
    config.validate()?;
    let sets = CollocationSets::build(problem)?;
    let mut state = PicnState::init(problem, config.seed)?;
    let history = train_from(problem, &sets, config, &mut state, observer)?;
    let fields = state.fields()?;
    let final_loss = assemble_loss(problem, &sets, &state, config)?;
    let errs = relative_errors(problem, &fields);
    Ok(TrainOutcome {
        history,
        rel_l2: errs.as_ref().map(|e| e.0.clone()),
        rel_l2_total: errs.map(|e| e.1),
        final_loss,
        state,
    })
}

/// Continues training `state` in place for `config.epochs` epochs.
pub fn train_from(
    problem: &ProblemDef,
    sets: &CollocationSets,
    config: &TrainingConfig,
    state: &mut PicnState,
    observer: &mut dyn TrainObserver,
) -> Result<Vec<EpochRecord>> {
    config.validate()?;
    let mut adam = AdamState::new(state.num_params());
    let mut history = Vec::new();
    let mut params = state.flatten();
    for epoch in 0..=config.epochs {
        let result = total_gradient(problem, sets, state, config)?;
        let total = result.breakdown.total;
        if !total.is_finite() {
            return Err(PicnError::Diverged { epoch, value: total });
        }
        if epoch % config.log_every == 0 || epoch == config.epochs {
            let record = EpochRecord {
                epoch,
                loss: result.breakdown.clone(),
                rel_l2: relative_errors(problem, &result.fields).map(|e| e.1),
            };
            observer.on_record(&record, state, &result.fields)?;
            history.push(record);
        }
        if epoch == config.epochs {
            break;
        }
        let grads = result.grads.flatten(state);
        adam_step(&mut params, &grads, &mut adam, config);
        state.unflatten(&params);
    }
    Ok(history)
}
