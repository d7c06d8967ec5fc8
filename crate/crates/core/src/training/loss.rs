use crate::error::{PicnError, Result};
use crate::generator::ModelGradients;
use crate::geometry::{interp_stencil, interp_stencil_extrapolated, BcKind, InterpStencil};
use crate::grid::{apply_stencil, apply_stencil_transpose, derivative_kernel, Field, StencilKernel};
use crate::problems::{PointBundle, ProblemDef, Quantity, ResidualOutput, MAX_CHANNELS, NQ};

use super::{PicnState, TrainingConfig};

/// Loss terms of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub l_g: f64,
    pub l_r1: f64,
    pub l_r2: f64,
    pub l_obs: f64,
    pub n_omega: usize,
    pub n_gamma1: usize,
    pub n_gamma2: usize,
    pub n_obs: usize,
}

impl LossBreakdown {
    /// Total recomposed from its parts with the given weights.
    pub fn recompose(&self, config: &TrainingConfig) -> f64 {
        let mut t = config.k_r * (self.l_r1 + self.l_r2) + config.k_g * self.l_g;
        if self.n_obs > 0 {
            t += config.k_obs() * self.l_obs;
        }
        t
    }
}

/// Dirichlet-type sample: value of one channel at an off-grid point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueSample {
    pub stencil: InterpStencil,
    pub channel: usize,
    pub target: f64,
}

/// Neumann sample: normal derivative read from the trimmed derivative fields.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FluxSample {
    pub stencil: InterpStencil,
    pub normal: [f64; 2],
    pub channel: usize,
    pub target: f64,
}

/// Everything about a problem that stays fixed during training.
#[derive(Debug, Clone)]
pub struct CollocationSets {
    /// Interior nodes `(row, col)` in full-grid indices, with coordinates.
    pub interior: Vec<(usize, usize)>,
    pub coords: Vec<(f64, f64)>,
    /// Offset between full-grid and derivative-field indices.
    pub margin: (usize, usize),
    /// Derivative kernels by quantity index, embedded to the grid stencil shape.
    pub kernels: Vec<Option<StencilKernel>>,
    /// `needed[c][q]`: quantity `q` of channel `c` must be computed.
    pub needed: [[bool; NQ]; MAX_CHANNELS],
    pub dirichlet: Vec<ValueSample>,
    pub neumann: Vec<FluxSample>,
    pub observations: Vec<ValueSample>,
}

impl CollocationSets {
    pub fn build(problem: &ProblemDef) -> Result<Self> {
        let grid = &problem.grid;
        let (sp, sq) = grid.stencil_shape();
        let margin = ((sp - 1) / 2, (sq - 1) / 2);
        let trimmed = grid.trimmed(sp, sq)?;
        let channels = problem.channels();

        let mut needed = [[false; NQ]; MAX_CHANNELS];
        for (c, reads) in problem.residual.reads.iter().enumerate().take(channels) {
            for q in reads {
                needed[c][q.index()] = true;
            }
        }
        let mut neumann = Vec::new();
        let mut dirichlet = Vec::new();
        for s in &problem.boundary {
            if s.channel >= channels {
                return Err(PicnError::InvalidArgument(format!(
                    "boundary sample targets channel {} of {channels}",
                    s.channel
                )));
            }
            match s.kind {
                BcKind::Dirichlet => dirichlet.push(ValueSample {
                    stencil: interp_stencil(grid, s.x, s.y)?,
                    channel: s.channel,
                    target: s.target,
                }),
                BcKind::Neumann => {
                    needed[s.channel][Quantity::Ux.index()] = true;
                    if !grid.is_1d() {
                        needed[s.channel][Quantity::Uy.index()] = true;
                    }
                    neumann.push(FluxSample {
                        stencil: interp_stencil_extrapolated(&trimmed, s.x, s.y),
                        normal: s.normal,
                        channel: s.channel,
                        target: s.target,
                    });
                }
            }
        }
        let observations = match &problem.observations {
            Some(obs) => obs
                .points
                .iter()
                .map(|&(x, y, v)| {
                    Ok(ValueSample {
                        stencil: interp_stencil(grid, x, y)?,
                        channel: 0,
                        target: v,
                    })
                })
                .collect::<Result<Vec<_>>>()?,
            None => Vec::new(),
        };

        let mut kernels = vec![None; NQ];
        for q in Quantity::ALL {
            if !(0..channels).any(|c| needed[c][q.index()]) {
                continue;
            }
            if let Some(op) = q.derivative() {
                if grid.is_1d() && op.needs_y() {
                    let (order_x, order_y) = op.orders();
                    return Err(PicnError::UnsupportedDerivative { order_x, order_y });
                }
                kernels[q.index()] = Some(derivative_kernel(op, grid.dx, grid.dy)?.embed(sp, sq)?);
            }
        }

        let interior = problem.collocation_nodes();
        let coords = interior.iter().map(|&(i, j)| grid.node(i, j)).collect();
        Ok(Self {
            interior,
            coords,
            margin,
            kernels,
            needed,
            dirichlet,
            neumann,
            observations,
        })
    }

    fn derivative_fields(&self, fields: &[Field]) -> Result<Vec<[Option<Field>; NQ]>> {
        fields
            .iter()
            .enumerate()
            .map(|(c, u)| {
                let mut out: [Option<Field>; NQ] = Default::default();
                for q in Quantity::ALL {
                    if self.needed[c][q.index()] {
                        if let Some(k) = &self.kernels[q.index()] {
                            out[q.index()] = Some(apply_stencil(u, k)?);
                        }
                    }
                }
                Ok(out)
            })
            .collect()
    }
}

/// Gradient of the total loss for every generator and every lambda entry
/// (frozen entries included, they are simply not updated).
#[derive(Debug, Clone, PartialEq)]
pub struct StateGradients {
    pub models: Vec<ModelGradients>,
    pub lambda: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct GradientResult {
    pub breakdown: LossBreakdown,
    pub grads: StateGradients,
    /// Generator outputs the loss was evaluated on.
    pub fields: Vec<Field>,
}

/// Adjoints of the loss with respect to the per-channel fields.
struct FieldAdjoints {
    /// Full-grid adjoints (value reads, boundary and observation samples).
    full: Vec<Field>,
    /// Trimmed adjoints per derivative quantity.
    deriv: Vec<[Option<Field>; NQ]>,
    lambda: Vec<f64>,
}

/// Loss and, when `adj` is given, its adjoint with respect to the fields.
fn evaluate(
    problem: &ProblemDef,
    sets: &CollocationSets,
    fields: &[Field],
    lambda: &[f64],
    config: &TrainingConfig,
    mut adj: Option<&mut FieldAdjoints>,
    mut parts: Option<&mut Vec<f64>>,
) -> Result<LossBreakdown> {
    let channels = problem.channels();
    if fields.len() != channels {
        return Err(PicnError::Shape(format!(
            "expected {channels} fields, got {}",
            fields.len()
        )));
    }
    for u in fields {
        if u.dim() != problem.grid.shape() {
            return Err(PicnError::Shape(format!(
                "field {:?} does not match grid {:?}",
                u.dim(),
                problem.grid.shape()
            )));
        }
    }
    let n_omega = sets.interior.len();
    if n_omega == 0 && config.k_g > 0.0 {
        return Err(PicnError::InvalidArgument(
            "no interior collocation points but the governing loss weight is positive".into(),
        ));
    }
    let derivs = sets.derivative_fields(fields)?;
    let (mr, mc) = sets.margin;
    let equations = problem.residual.equations;

    let mut l_g = 0.0;
    let mut out = ResidualOutput::default();
    let g_scale = if n_omega > 0 { 2.0 * config.k_g / n_omega as f64 } else { 0.0 };
    for (&(i, j), &(x, y)) in sets.interior.iter().zip(&sets.coords) {
        let mut b = PointBundle::new(x, y, lambda);
        for (c, u) in fields.iter().enumerate() {
            for q in Quantity::ALL {
                if !sets.needed[c][q.index()] {
                    continue;
                }
                let v = match &derivs[c][q.index()] {
                    Some(d) => d[[i - mr, j - mc]],
                    None => u[[i, j]],
                };
                b.set(c, q, v);
            }
        }
        problem.residual.eval(&b, &mut out);
        for e in 0..equations {
            let r = out.values[e];
            l_g += r * r;
            if let Some(v) = parts.as_deref_mut() {
                v.push(config.k_g * r * r / n_omega as f64);
            }
            if let Some(a) = adj.as_deref_mut() {
                let s = g_scale * r;
                for c in 0..channels {
                    for q in Quantity::ALL {
                        let d = out.d_field[e][c][q.index()];
                        if d == 0.0 || !sets.needed[c][q.index()] {
                            continue;
                        }
                        match &mut a.deriv[c][q.index()] {
                            Some(f) => f[[i - mr, j - mc]] += s * d,
                            None => a.full[c][[i, j]] += s * d,
                        }
                    }
                }
                for (l, g) in a.lambda.iter_mut().enumerate() {
                    *g += s * out.d_lambda[e][l];
                }
            }
        }
    }
    if n_omega > 0 {
        l_g /= n_omega as f64;
    }

    let value_term = |samples: &[ValueSample],
                      weight: f64,
                      mut adj: Option<&mut FieldAdjoints>,
                      mut parts: Option<&mut Vec<f64>>|
     -> Result<f64> {
        if samples.is_empty() {
            return Ok(0.0);
        }
        let n = samples.len() as f64;
        let mut sum = 0.0;
        for s in samples {
            let u = &fields[s.channel];
            let v: f64 = s.stencil.taps().iter().map(|&((i, j), w)| w * u[[i, j]]).sum();
            let d = v - s.target;
            sum += d * d;
            if let Some(p) = parts.as_deref_mut() {
                p.push(weight * d * d / n);
            }
            if let Some(a) = adj.as_deref_mut() {
                let g = 2.0 * weight * d / n;
                for ((i, j), w) in s.stencil.taps() {
                    a.full[s.channel][[i, j]] += g * w;
                }
            }
        }
        Ok(sum / n)
    };

    let l_r1 = value_term(&sets.dirichlet, config.k_r, adj.as_deref_mut(), parts.as_deref_mut())?;
    let l_obs = value_term(&sets.observations, config.k_obs(), adj.as_deref_mut(), parts.as_deref_mut())?;

    let mut l_r2 = 0.0;
    if !sets.neumann.is_empty() {
        let n = sets.neumann.len() as f64;
        let (ix, iy) = (Quantity::Ux.index(), Quantity::Uy.index());
        for s in &sets.neumann {
            let dx = derivs[s.channel][ix].as_ref().expect("Ux computed for Neumann");
            let dy = derivs[s.channel][iy].as_ref();
            let taps = s.stencil.taps();
            let mut v = 0.0;
            for &((i, j), w) in &taps {
                v += w * s.normal[0] * dx[[i, j]];
                if let Some(dy) = dy {
                    v += w * s.normal[1] * dy[[i, j]];
                }
            }
            let d = v - s.target;
            l_r2 += d * d;
            if let Some(p) = parts.as_deref_mut() {
                p.push(config.k_r * d * d / n);
            }
            if let Some(a) = adj.as_deref_mut() {
                let g = 2.0 * config.k_r * d / n;
                for &((i, j), w) in &taps {
                    if let Some(f) = &mut a.deriv[s.channel][ix] {
                        f[[i, j]] += g * w * s.normal[0];
                    }
                    if let Some(f) = &mut a.deriv[s.channel][iy] {
                        f[[i, j]] += g * w * s.normal[1];
                    }
                }
            }
        }
        l_r2 /= n;
    }

    let mut b = LossBreakdown {
        total: 0.0,
        l_g,
        l_r1,
        l_r2,
        l_obs,
        n_omega,
        n_gamma1: sets.dirichlet.len(),
        n_gamma2: sets.neumann.len(),
        n_obs: sets.observations.len(),
    };
    b.total = b.recompose(config);
    Ok(b)
}

/// Loss of explicit per-channel fields (bypasses the generators).
pub fn loss_of_fields(
    problem: &ProblemDef,
    sets: &CollocationSets,
    fields: &[Field],
    lambda: &[f64],
    config: &TrainingConfig,
) -> Result<LossBreakdown> {
    evaluate(problem, sets, fields, lambda, config, None, None)
}

/// Weighted per-point loss contributions in a fixed order; they sum to
/// the total loss. Differencing two of these lists point by point avoids
/// the cancellation of differencing two large totals.
pub fn loss_contributions(
    problem: &ProblemDef,
    sets: &CollocationSets,
    state: &PicnState,
    config: &TrainingConfig,
) -> Result<Vec<f64>> {
    let fields = state.fields()?;
    let mut parts = Vec::new();
    evaluate(problem, sets, &fields, &state.lambda.values, config, None, Some(&mut parts))?;
    Ok(parts)
}

/// Loss of the generator outputs of `state`.
pub fn assemble_loss(
    problem: &ProblemDef,
    sets: &CollocationSets,
    state: &PicnState,
    config: &TrainingConfig,
) -> Result<LossBreakdown> {
    let fields = state.fields()?;
    loss_of_fields(problem, sets, &fields, &state.lambda.values, config)
}

/// Loss and its exact gradient with respect to all generator parameters
/// and lambda.
pub fn total_gradient(
    problem: &ProblemDef,
    sets: &CollocationSets,
    state: &PicnState,
    config: &TrainingConfig,
) -> Result<GradientResult> {
    let forward = state
        .models
        .iter()
        .map(|m| m.forward())
        .collect::<Result<Vec<_>>>()?;
    let fields: Vec<Field> = forward.iter().map(|(_, u)| u.clone()).collect();
    let shape = problem.grid.shape();
    let derivs_shape = {
        let (sp, sq) = problem.grid.stencil_shape();
        (shape.0 + 1 - sp, shape.1 + 1 - sq)
    };
    let mut adj = FieldAdjoints {
        full: vec![Field::zeros(shape); fields.len()],
        deriv: (0..fields.len())
            .map(|c| {
                let mut a: [Option<Field>; NQ] = Default::default();
                for q in Quantity::ALL {
                    if sets.needed[c][q.index()] && sets.kernels[q.index()].is_some() {
                        a[q.index()] = Some(Field::zeros(derivs_shape));
                    }
                }
                a
            })
            .collect(),
        lambda: vec![0.0; state.lambda.len()],
    };
    let breakdown = evaluate(problem, sets, &fields, &state.lambda.values, config, Some(&mut adj), None)?;

    let mut models = Vec::with_capacity(fields.len());
    for (c, (model, (hidden, u))) in state.models.iter().zip(&forward).enumerate() {
        let mut g = adj.full[c].clone();
        for q in Quantity::ALL {
            if let (Some(a), Some(k)) = (&adj.deriv[c][q.index()], &sets.kernels[q.index()]) {
                g += &apply_stencil_transpose(a, k, shape.0, shape.1)?;
            }
        }
        models.push(model.backward(hidden, u, &g)?);
    }
    Ok(GradientResult {
        breakdown,
        grads: StateGradients {
            models,
            lambda: adj.lambda,
        },
        fields,
    })
}
