//! Builtin benchmark problems and the residual-evaluation contract.
//!
//! A residual callback receives, per collocation point, the field value and
//! its stencil derivatives for every channel and must return the residual of
//! each governing equation together with its partial derivatives with
//! respect to every field quantity and every operator coefficient.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::analysis::{make_observations, NoiseModel, ObservationKind, ObservationSet};
use crate::error::{PicnError, Result};
use crate::generator::Activation;
use crate::geometry::{boundary_samples, BcKind, BoundaryCondition, BoundarySample, DomainShape};
use crate::grid::{Derivative, GridSpec};
use crate::training::{TrainableLambda, TrainingConfig};

pub const MAX_CHANNELS: usize = 2;
pub const MAX_EQUATIONS: usize = 2;
pub const MAX_LAMBDA: usize = 4;

/// Field quantities a residual can read at a point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Quantity {
    U = 0,
    Ux = 1,
    Uy = 2,
    Uxx = 3,
    Uyy = 4,
    Uxy = 5,
    Laplace = 6,
}

pub const NQ: usize = 7;

impl Quantity {
    pub const ALL: [Quantity; NQ] = [
        Quantity::U,
        Quantity::Ux,
        Quantity::Uy,
        Quantity::Uxx,
        Quantity::Uyy,
        Quantity::Uxy,
        Quantity::Laplace,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::U => "u",
            Self::Ux => "u_x",
            Self::Uy => "u_y",
            Self::Uxx => "u_xx",
            Self::Uyy => "u_yy",
            Self::Uxy => "u_xy",
            Self::Laplace => "laplace(u)",
        }
    }

    /// Stencil producing this quantity; `None` for the field itself.
    pub fn derivative(self) -> Option<Derivative> {
        match self {
            Self::U => None,
            Self::Ux => Some(Derivative::X),
            Self::Uy => Some(Derivative::Y),
            Self::Uxx => Some(Derivative::XX),
            Self::Uyy => Some(Derivative::YY),
            Self::Uxy => Some(Derivative::XY),
            Self::Laplace => Some(Derivative::Laplace),
        }
    }

    fn bit(self) -> u8 {
        1 << self.index()
    }
}

/// Per-point inputs to a residual callback.
#[derive(Debug, Clone, Copy)]
pub struct PointBundle<'a> {
    pub x: f64,
    pub y: f64,
    /// `fields[c][q]` is quantity `q` of channel `c`.
    pub fields: [[f64; NQ]; MAX_CHANNELS],
    /// Bit mask of populated quantities (bit `q.index()`).
    pub present: u8,
    pub lambda: &'a [f64],
}

impl<'a> PointBundle<'a> {
    pub fn new(x: f64, y: f64, lambda: &'a [f64]) -> Self {
        Self {
            x,
            y,
            fields: [[0.0; NQ]; MAX_CHANNELS],
            present: 0,
            lambda,
        }
    }

    pub fn set(&mut self, channel: usize, q: Quantity, value: f64) {
        self.fields[channel][q.index()] = value;
        self.present |= q.bit();
    }

    pub fn get(&self, channel: usize, q: Quantity) -> f64 {
        self.fields[channel][q.index()]
    }

    /// Bundle populated from an exact jet (value and all derivatives).
    pub fn from_jet(x: f64, y: f64, jet: &[[f64; NQ]; MAX_CHANNELS], lambda: &'a [f64]) -> Self {
        Self {
            x,
            y,
            fields: *jet,
            present: u8::MAX >> 1,
            lambda,
        }
    }
}

/// Residual values and partials for one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualOutput {
    pub values: [f64; MAX_EQUATIONS],
    /// `d_field[e][c][q]` = d residual_e / d quantity q of channel c.
    pub d_field: [[[f64; NQ]; MAX_CHANNELS]; MAX_EQUATIONS],
    /// `d_lambda[e][l]` = d residual_e / d lambda_l.
    pub d_lambda: [[f64; MAX_LAMBDA]; MAX_EQUATIONS],
}

impl Default for ResidualOutput {
    fn default() -> Self {
        Self {
            values: [0.0; MAX_EQUATIONS],
            d_field: [[[0.0; NQ]; MAX_CHANNELS]; MAX_EQUATIONS],
            d_lambda: [[0.0; MAX_LAMBDA]; MAX_EQUATIONS],
        }
    }
}

impl ResidualOutput {
    pub fn clear(&mut self) {
        *self = Self::default();
    }

    pub fn partial(&mut self, eq: usize, channel: usize, q: Quantity) -> &mut f64 {
        &mut self.d_field[eq][channel][q.index()]
    }
}

pub type ResidualFn = Arc<dyn Fn(&PointBundle, &mut ResidualOutput) + Send + Sync>;
/// Exact solution jet: value and analytic derivatives for every channel.
pub type ExactFn = Arc<dyn Fn(f64, f64) -> [[f64; NQ]; MAX_CHANNELS] + Send + Sync>;

#[derive(Clone)]
pub struct ResidualSpec {
    pub channels: usize,
    pub equations: usize,
    pub n_lambda: usize,
    /// Quantities read per channel.
    pub reads: Vec<Vec<Quantity>>,
    pub func: ResidualFn,
}

impl fmt::Debug for ResidualSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ResidualSpec")
            .field("channels", &self.channels)
            .field("equations", &self.equations)
            .field("n_lambda", &self.n_lambda)
            .field("reads", &self.reads)
            .finish_non_exhaustive()
    }
}

impl ResidualSpec {
    pub fn eval(&self, bundle: &PointBundle, out: &mut ResidualOutput) {
        out.clear();
        (self.func)(bundle, out);
    }

    fn required_mask(&self) -> u8 {
        self.reads
            .iter()
            .flatten()
            .fold(0u8, |m, q| m | q.bit())
    }
}

/// Dense problem parameters (`k`, `m`, grid overrides, ...).
pub type ProblemParams = BTreeMap<String, f64>;

#[derive(Clone)]
pub struct ProblemDef {
    pub name: String,
    pub domain: DomainShape,
    pub grid: GridSpec,
    /// Generator convolution kernel shape.
    pub kernel: (usize, usize),
    pub activation: Activation,
    /// Scale of the random hidden-field initialization; 0 starts from a
    /// constant field.
    pub hidden_init_scale: f64,
    pub residual: ResidualSpec,
    pub boundary: Vec<BoundarySample>,
    pub observations: Option<ObservationSet>,
    pub exact: Option<ExactFn>,
    /// False when `exact` is only a reference field the physics does not
    /// satisfy (mis-specified denoising).
    pub exact_solves_residual: bool,
    pub lambda: TrainableLambda,
    /// Operator coefficients the exact solution satisfies.
    pub lambda_true: Option<Vec<f64>>,
    pub training: TrainingConfig,
    /// Fully resolved parameter values.
    pub params: ProblemParams,
}

impl fmt::Debug for ProblemDef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemDef")
            .field("name", &self.name)
            .field("domain", &self.domain)
            .field("grid", &self.grid)
            .field("kernel", &self.kernel)
            .field("boundary", &self.boundary.len())
            .field("params", &self.params)
            .finish_non_exhaustive()
    }
}

impl ProblemDef {
    pub fn channels(&self) -> usize {
        self.residual.channels
    }

    /// Hidden-field shape so that the generator output covers the grid.
    pub fn hidden_shape(&self) -> (usize, usize) {
        (self.grid.ny + self.kernel.0 - 1, self.grid.nx + self.kernel.1 - 1)
    }

    pub fn exact_value(&self, x: f64, y: f64, channel: usize) -> Option<f64> {
        self.exact.as_ref().map(|f| f(x, y)[channel][Quantity::U.index()])
    }

    /// Nodes the governing residual is enforced on: valid-interior nodes
    /// that lie inside the domain, as `(row, col)` in full-grid indices.
    pub fn collocation_nodes(&self) -> Vec<(usize, usize)> {
        let g = &self.grid;
        let (mr, mc) = if g.is_1d() { (0, 1) } else { (1, 1) };
        let mut out = Vec::new();
        for i in mr..g.ny - mr {
            for j in mc..g.nx - mc {
                let (x, y) = g.node(i, j);
                if self.domain.inside(x, y) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Nodes used for error reporting: every node on rectangular domains,
    /// the collocation nodes on polar ones.
    pub fn evaluation_nodes(&self) -> Vec<(usize, usize)> {
        if self.domain.is_polar() {
            self.collocation_nodes()
        } else {
            (0..self.grid.ny)
                .flat_map(|i| (0..self.grid.nx).map(move |j| (i, j)))
                .collect()
        }
    }
}

/// Evaluates the residual for each bundle. Every bundle must carry all
/// quantities the residual reads.
pub fn evaluate_residual(problem: &ProblemDef, bundles: &[PointBundle]) -> Result<Vec<ResidualOutput>> {
    let need = problem.residual.required_mask();
    bundles
        .iter()
        .map(|b| {
            let missing = need & !b.present;
            if missing != 0 {
                let q = Quantity::ALL
                    .into_iter()
                    .find(|q| missing & q.bit() != 0)
                    .expect("nonzero mask");
                return Err(PicnError::MissingQuantity(q.name()));
            }
            let mut out = ResidualOutput::default();
            problem.residual.eval(b, &mut out);
            Ok(out)
        })
        .collect()
}

pub const BUILTIN_PROBLEMS: [&str; 10] = [
    "sweep1d",
    "sweep2d",
    "sine_ode",
    "mixed_bvp",
    "schrodinger",
    "star",
    "bird",
    "starfish",
    "aniso_inverse",
    "denoise",
];

pub fn builtin_names() -> Vec<String> {
    BUILTIN_PROBLEMS.iter().map(|s| s.to_string()).collect()
}

struct Params<'a> {
    problem: &'a str,
    given: &'a ProblemParams,
    resolved: ProblemParams,
    allowed: Vec<&'static str>,
}

impl<'a> Params<'a> {
    fn new(problem: &'a str, given: &'a ProblemParams) -> Self {
        Self {
            problem,
            given,
            resolved: ProblemParams::new(),
            allowed: Vec::new(),
        }
    }

    fn get(&mut self, key: &'static str, default: f64) -> f64 {
        self.allowed.push(key);
        let v = self.given.get(key).copied().unwrap_or(default);
        self.resolved.insert(key.to_string(), v);
        v
    }

    fn opt(&mut self, key: &'static str) -> Option<f64> {
        self.allowed.push(key);
        let v = self.given.get(key).copied();
        if let Some(v) = v {
            self.resolved.insert(key.to_string(), v);
        }
        v
    }

    fn count(&mut self, key: &'static str, default: usize) -> Result<usize> {
        let v = self.get(key, default as f64);
        if v < 1.0 || v.fract() != 0.0 {
            return Err(PicnError::InvalidArgument(format!(
                "parameter `{key}` of `{}` must be a positive integer, got {v}",
                self.problem
            )));
        }
        Ok(v as usize)
    }

    fn finish(self) -> Result<ProblemParams> {
        if let Some(key) = self.given.keys().find(|k| !self.allowed.contains(&k.as_str())) {
            return Err(PicnError::UnknownParameter {
                problem: self.problem.to_string(),
                key: key.clone(),
            });
        }
        Ok(self.resolved)
    }
}

/// Builds a builtin problem. `params` may override problem constants
/// (`m`, `k`, noise settings) and the grid (`nx`, `ny`, `spacing`,
/// `boundary_points`).
pub fn get_problem(name: &str, params: &ProblemParams) -> Result<ProblemDef> {
    match name {
        "sweep1d" => sweep1d(params),
        "sweep2d" => sweep2d(params),
        "sine_ode" => sine_ode(params),
        "mixed_bvp" => mixed_bvp(params),
        "schrodinger" => schrodinger(params),
        "star" => star(params),
        "bird" => bird(params),
        "starfish" => starfish(params),
        "aniso_inverse" => aniso_inverse(params),
        "denoise" => denoise(params, false),
        "denoise_misspec" => denoise(params, true),
        other => Err(PicnError::UnknownProblem {
            name: other.to_string(),
            builtins: builtin_names(),
        }),
    }
}

fn jet1(u: [f64; NQ]) -> [[f64; NQ]; MAX_CHANNELS] {
    [u, [0.0; NQ]]
}

/// Jet of `sin(phase)` given the phase jet `[phi, phi_x, phi_y, phi_xx, phi_yy, phi_xy]`.
fn sin_jet(p: [f64; 6]) -> [f64; NQ] {
    let (s, c) = p[0].sin_cos();
    let uxx = c * p[3] - s * p[1] * p[1];
    let uyy = c * p[4] - s * p[2] * p[2];
    [s, c * p[1], c * p[2], uxx, uyy, c * p[5] - s * p[1] * p[2], uxx + uyy]
}

fn cos_jet(p: [f64; 6]) -> [f64; NQ] {
    let (s, c) = p[0].sin_cos();
    let uxx = -s * p[3] - c * p[1] * p[1];
    let uyy = -s * p[4] - c * p[2] * p[2];
    [c, -s * p[1], -s * p[2], uxx, uyy, -s * p[5] - c * p[1] * p[2], uxx + uyy]
}

fn line_grid(p: &mut Params, x_min: f64, x_max: f64, nx_default: usize) -> Result<GridSpec> {
    let spacing = p.opt("spacing");
    let nx = match spacing {
        Some(h) => ((x_max - x_min) / h).round() as usize + 1,
        None => p.count("nx", nx_default)?,
    };
    GridSpec::line(x_min, x_max, nx)
}

fn rect_grid(p: &mut Params, bounds: [f64; 4], nx_default: usize, ny_default: usize) -> Result<GridSpec> {
    let [x0, x1, y0, y1] = bounds;
    let (nx, ny) = match p.opt("spacing") {
        Some(h) => (
            ((x1 - x0) / h).round() as usize + 1,
            ((y1 - y0) / h).round() as usize + 1,
        ),
        None => (p.count("nx", nx_default)?, p.count("ny", ny_default)?),
    };
    GridSpec::new(x0, x1, y0, y1, nx, ny)
}

/// Grid covering a polar domain's bounding box with one extra node layer
/// on every side, so boundary points always have a full interpolation cell.
fn polar_grid(p: &mut Params, domain: &DomainShape, spacing_default: f64) -> Result<GridSpec> {
    let [bx0, bx1, by0, by1] = domain.bounding_box();
    let nx = p.opt("nx");
    let ny = p.opt("ny");
    if let (Some(nx), Some(ny)) = (nx, ny) {
        let (nx, ny) = (nx as usize, ny as usize);
        if nx < 4 || ny < 4 {
            return Err(PicnError::InvalidGrid("polar grids need at least 4 nodes per axis".into()));
        }
        let hx = (bx1 - bx0) / (nx - 3) as f64;
        let hy = (by1 - by0) / (ny - 3) as f64;
        return GridSpec::new(bx0 - hx, bx1 + hx, by0 - hy, by1 + hy, nx, ny);
    }
    let h = p.get("spacing", spacing_default);
    let x0 = ((bx0 / h).floor() - 1.0) * h;
    let x1 = ((bx1 / h).ceil() + 1.0) * h;
    let y0 = ((by0 / h).floor() - 1.0) * h;
    let y1 = ((by1 / h).ceil() + 1.0) * h;
    let nx = ((x1 - x0) / h).round() as usize + 1;
    let ny = ((y1 - y0) / h).round() as usize + 1;
    GridSpec::new(x0, x1, y0, y1, nx, ny)
}

fn dirichlet(channel: usize, target: f64) -> BoundaryCondition {
    BoundaryCondition {
        kind: BcKind::Dirichlet,
        channel,
        target,
    }
}

fn single_point_dirichlet(x: f64, target: f64) -> Vec<BoundarySample> {
    vec![BoundarySample {
        x,
        y: 0.0,
        normal: [-1.0, 0.0],
        kind: BcKind::Dirichlet,
        channel: 0,
        target,
    }]
}

fn scalar_residual(reads: Vec<Quantity>, n_lambda: usize, f: ResidualFn) -> ResidualSpec {
    ResidualSpec {
        channels: 1,
        equations: 1,
        n_lambda,
        reads: vec![reads],
        func: f,
    }
}

struct Assembled {
    name: &'static str,
    domain: DomainShape,
    grid: GridSpec,
    residual: ResidualSpec,
    boundary: Vec<BoundarySample>,
    observations: Option<ObservationSet>,
    exact: Option<ExactFn>,
    exact_solves_residual: bool,
    lambda: TrainableLambda,
    lambda_true: Option<Vec<f64>>,
    training: TrainingConfig,
}

fn finish(a: Assembled, p: Params) -> Result<ProblemDef> {
    let params = p.finish()?;
    let kernel = a.grid.stencil_shape();
    Ok(ProblemDef {
        name: a.name.to_string(),
        domain: a.domain,
        grid: a.grid,
        kernel,
        activation: Activation::Tanh,
        hidden_init_scale: 1.0,
        residual: a.residual,
        boundary: a.boundary,
        observations: a.observations,
        exact: a.exact,
        exact_solves_residual: a.exact_solves_residual,
        lambda: a.lambda,
        lambda_true: a.lambda_true,
        training: a.training,
        params,
    })
}

/// `sin(u^2) + u_t = f(t)` on `[0, 3 pi]`, `u(0) = 0`, exact `sin(t^2)`.
/// Time runs along the grid's x axis.
fn sweep1d(params: &ProblemParams) -> Result<ProblemDef> {
    let mut p = Params::new("sweep1d", params);
    let t_max = 3.0 * PI;
    let grid = line_grid(&mut p, 0.0, t_max, 1000)?;
    let forcing = |t: f64| (t * t).sin().powi(2).sin() + 2.0 * t * (t * t).cos();
    let residual = scalar_residual(
        vec![Quantity::U, Quantity::Ux],
        0,
        Arc::new(move |b, out| {
            let u = b.get(0, Quantity::U);
            let ut = b.get(0, Quantity::Ux);
            out.values[0] = (u * u).sin() + ut - forcing(b.x);
            *out.partial(0, 0, Quantity::U) = 2.0 * u * (u * u).cos();
            *out.partial(0, 0, Quantity::Ux) = 1.0;
        }),
    );
    let exact: ExactFn = Arc::new(|t, _| jet1(sin_jet([t * t, 2.0 * t, 0.0, 2.0, 0.0, 0.0])));
    finish(
        Assembled {
            name: "sweep1d",
            domain: DomainShape::rectangle(0.0, t_max, 0.0, 0.0),
            grid,
            residual,
            boundary: single_point_dirichlet(0.0, 0.0),
            observations: None,
            exact: Some(exact),
            exact_solves_residual: true,
            lambda: TrainableLambda::none(),
            lambda_true: None,
            training: TrainingConfig::from_ratio(9.0, 1.0, 1e-3, 20_000),
        },
        p,
    )
}

/// `sin(u^2) + laplace(u) = f` shared by the rectangle and bird problems;
/// `f` is the forcing for the supplied exact jet.
fn sine_square_laplace(exact: ExactFn) -> ResidualSpec {
    scalar_residual(
        vec![Quantity::U, Quantity::Laplace],
        0,
        Arc::new(move |b, out| {
            let e = exact(b.x, b.y)[0];
            let f = (e[0] * e[0]).sin() + e[Quantity::Laplace.index()];
            let u = b.get(0, Quantity::U);
            out.values[0] = (u * u).sin() + b.get(0, Quantity::Laplace) - f;
            *out.partial(0, 0, Quantity::U) = 2.0 * u * (u * u).cos();
            *out.partial(0, 0, Quantity::Laplace) = 1.0;
        }),
    )
}

fn radial_sine_exact() -> ExactFn {
    Arc::new(|x, y| jet1(sin_jet([x * x + y * y, 2.0 * x, 2.0 * y, 2.0, 2.0, 0.0])))
}

/// Forcing `sin(sin^2(r^2)) + 4 cos(r^2) - 4 r^2 sin(r^2)` written out in
/// closed form; used to cross-check the jet-derived forcing.
pub fn radial_sine_forcing(x: f64, y: f64) -> f64 {
    let s = x * x + y * y;
    s.sin().powi(2).sin() + 4.0 * s.cos() - 4.0 * s * s.sin()
}

fn sweep2d(params: &ProblemParams) -> Result<ProblemDef> {
    let mut p = Params::new("sweep2d", params);
    let grid = rect_grid(&mut p, [0.0, 10.0, 0.0, 6.0], 200, 120)?;
    let count = p.count("boundary_points", 636)?;
    let domain = DomainShape::rectangle(0.0, 10.0, 0.0, 6.0);
    let boundary = boundary_samples(&domain, count, &|x, y, _| {
        vec![dirichlet(0, (x * x + y * y).sin())]
    })?;
    let exact = radial_sine_exact();
    finish(
        Assembled {
            name: "sweep2d",
            domain,
            grid,
            residual: sine_square_laplace(exact.clone()),
            boundary,
            observations: None,
            exact: Some(exact),
            exact_solves_residual: true,
            lambda: TrainableLambda::none(),
            lambda_true: None,
            training: TrainingConfig::from_ratio(999.0, 1.0, 1e-2, 5_000),
        },
        p,
    )
}

/// `u_x + sin(u_x) + u = q` on `[0, 3]`, exact `exp(-x) sin(m pi x^2)`.
fn sine_ode(params: &ProblemParams) -> Result<ProblemDef> {
    let mut p = Params::new("sine_ode", params);
    let m = p.get("m", 1.0);
    let grid = line_grid(&mut p, 0.0, 3.0, 200)?;
    let w = m * PI;
    let du = move |x: f64| (-x).exp() * (2.0 * w * x * (w * x * x).cos() - (w * x * x).sin());
    let q = move |x: f64| {
        let d = du(x);
        d + d.sin() + (-x).exp() * (w * x * x).sin()
    };
    let residual = scalar_residual(
        vec![Quantity::U, Quantity::Ux],
        0,
        Arc::new(move |b, out| {
            let ux = b.get(0, Quantity::Ux);
            out.values[0] = ux + ux.sin() + b.get(0, Quantity::U) - q(b.x);
            *out.partial(0, 0, Quantity::U) = 1.0;
            *out.partial(0, 0, Quantity::Ux) = 1.0 + ux.cos();
        }),
    );
    let exact: ExactFn = Arc::new(move |x, _| {
        let e = (-x).exp();
        let s = sin_jet([w * x * x, 2.0 * w * x, 0.0, 2.0 * w, 0.0, 0.0]);
        let (v, vx, vxx) = (s[0], s[1], s[3]);
        let mut jet = [0.0; NQ];
        jet[0] = e * v;
        jet[1] = e * (vx - v);
        jet[3] = e * (vxx - 2.0 * vx + v);
        jet[6] = jet[3];
        jet1(jet)
    });
    finish(
        Assembled {
            name: "sine_ode",
            domain: DomainShape::rectangle(0.0, 3.0, 0.0, 0.0),
            grid,
            residual,
            boundary: single_point_dirichlet(0.0, 0.0),
            observations: None,
            exact: Some(exact),
            exact_solves_residual: true,
            lambda: TrainableLambda::none(),
            lambda_true: None,
            training: TrainingConfig::from_ratio(9.0, 1.0, 1e-2, 10_000),
        },
        p,
    )
}

/// Rectangle `[0,5]x[0,3]`: Neumann `du/dn = -2x cos(x^2+y^2)` on `x = 0`,
/// Dirichlet `sin(x^2+y^2)` elsewhere.
fn mixed_bvp(params: &ProblemParams) -> Result<ProblemDef> {
    let mut p = Params::new("mixed_bvp", params);
    let grid = rect_grid(&mut p, [0.0, 5.0, 0.0, 3.0], 100, 60)?;
    let count = p.count("boundary_points", 320)?;
    let domain = DomainShape::rectangle(0.0, 5.0, 0.0, 3.0);
    let boundary = boundary_samples(&domain, count, &|x, y, _| {
        let s = x * x + y * y;
        if x == 0.0 {
            vec![BoundaryCondition {
                kind: BcKind::Neumann,
                channel: 0,
                target: -2.0 * x * s.cos(),
            }]
        } else {
            vec![dirichlet(0, s.sin())]
        }
    })?;
    let exact = radial_sine_exact();
    finish(
        Assembled {
            name: "mixed_bvp",
            domain,
            grid,
            residual: sine_square_laplace(exact.clone()),
            boundary,
            observations: None,
            exact: Some(exact),
            exact_solves_residual: true,
            lambda: TrainableLambda::none(),
            lambda_true: None,
            training: TrainingConfig::from_ratio(99.0, 1.0, 1e-3, 20_000),
        },
        p,
    )
}

/// Nonlinear Schroedinger as a real system in `(u, v)` on `[0,pi]^2`;
/// `x` along the grid's x axis, `t` along its y axis.
fn schrodinger(params: &ProblemParams) -> Result<ProblemDef> {
    let mut p = Params::new("schrodinger", params);
    let grid = rect_grid(&mut p, [0.0, PI, 0.0, PI], 10, 10)?;
    let count = p.count("boundary_points", 40)?;
    let domain = DomainShape::rectangle(0.0, PI, 0.0, PI);
    let boundary = boundary_samples(&domain, count, &|x, t, _| {
        vec![dirichlet(0, (x - t).cos()), dirichlet(1, (x - t).sin())]
    })?;
    let residual = ResidualSpec {
        channels: 2,
        equations: 2,
        n_lambda: 0,
        reads: vec![
            vec![Quantity::U, Quantity::Uy, Quantity::Uxx],
            vec![Quantity::U, Quantity::Uy, Quantity::Uxx],
        ],
        func: Arc::new(|b, out| {
            let (u, v) = (b.get(0, Quantity::U), b.get(1, Quantity::U));
            let r2 = u * u + v * v;
            out.values[0] = b.get(0, Quantity::Uy) + b.get(1, Quantity::Uxx) + v - r2 * v;
            *out.partial(0, 0, Quantity::Uy) = 1.0;
            *out.partial(0, 1, Quantity::Uxx) = 1.0;
            *out.partial(0, 0, Quantity::U) = -2.0 * u * v;
            *out.partial(0, 1, Quantity::U) = 1.0 - u * u - 3.0 * v * v;
            out.values[1] = b.get(1, Quantity::Uy) - b.get(0, Quantity::Uxx) - u + r2 * u;
            *out.partial(1, 1, Quantity::Uy) = 1.0;
            *out.partial(1, 0, Quantity::Uxx) = -1.0;
            *out.partial(1, 0, Quantity::U) = -1.0 + 3.0 * u * u + v * v;
            *out.partial(1, 1, Quantity::U) = 2.0 * u * v;
        }),
    };
    let exact: ExactFn = Arc::new(|x, t| {
        let phase = [x - t, 1.0, -1.0, 0.0, 0.0, 0.0];
        [cos_jet(phase), sin_jet(phase)]
    });
    finish(
        Assembled {
            name: "schrodinger",
            domain,
            grid,
            residual,
            boundary,
            observations: None,
            exact: Some(exact),
            exact_solves_residual: true,
            lambda: TrainableLambda::none(),
            lambda_true: None,
            training: TrainingConfig::from_ratio(1.0, 9.0, 1e-3, 20_000),
        },
        p,
    )
}

fn polar_dirichlet(domain: &DomainShape, count: usize, exact: &ExactFn) -> Result<Vec<BoundarySample>> {
    let exact = exact.clone();
    boundary_samples(domain, count, &move |x, y, _| vec![dirichlet(0, exact(x, y)[0][0])])
}

/// Star domain `rho <= 1 + cos^2(4 theta)` with `u_x + u u_y = f`.
fn star(params: &ProblemParams) -> Result<ProblemDef> {
    let mut p = Params::new("star", params);
    let k = p.get("k", 5.0);
    let domain = DomainShape::polar("star", |t: f64| 1.0 + (4.0 * t).cos().powi(2))?;
    let grid = polar_grid(&mut p, &domain, 0.02)?;
    let count = p.count("boundary_points", 800)?;
    let phase = move |x: f64, y: f64| [x + k * x * y + k * y * y, 1.0 + k * y, k * x + 2.0 * k * y, 0.0, 2.0 * k, k];
    let exact: ExactFn = Arc::new(move |x, y| jet1(cos_jet(phase(x, y))));
    let forcing = move |x: f64, y: f64| {
        let ph = x + k * x * y + k * y * y;
        -ph.sin() * (k * y + 1.0) - ph.sin() * ph.cos() * (k * x + 2.0 * k * y)
    };
    let residual = scalar_residual(
        vec![Quantity::U, Quantity::Ux, Quantity::Uy],
        0,
        Arc::new(move |b, out| {
            let (u, ux, uy) = (b.get(0, Quantity::U), b.get(0, Quantity::Ux), b.get(0, Quantity::Uy));
            out.values[0] = ux + u * uy - forcing(b.x, b.y);
            *out.partial(0, 0, Quantity::Ux) = 1.0;
            *out.partial(0, 0, Quantity::U) = uy;
            *out.partial(0, 0, Quantity::Uy) = u;
        }),
    );
    let boundary = polar_dirichlet(&domain, count, &exact)?;
    finish(
        Assembled {
            name: "star",
            domain,
            grid,
            residual,
            boundary,
            observations: None,
            exact: Some(exact),
            exact_solves_residual: true,
            lambda: TrainableLambda::none(),
            lambda_true: None,
            training: TrainingConfig::from_ratio(1.0, 9.0, 1e-3, 20_000),
        },
        p,
    )
}

/// Bird-like domain with `sin(u^2) + laplace(u) = f`, exact `cos(kx + ky)`.
fn bird(params: &ProblemParams) -> Result<ProblemDef> {
    let mut p = Params::new("bird", params);
    let k = p.get("k", 5.0);
    let domain = DomainShape::polar("bird", |t: f64| {
        t.sin().exp() * (3.0 * t).sin().powi(2) + t.cos().exp() * (3.0 * t).cos().powi(2)
    })?;
    let grid = polar_grid(&mut p, &domain, 0.02)?;
    let count = p.count("boundary_points", 800)?;
    let exact: ExactFn = Arc::new(move |x, y| jet1(cos_jet([k * x + k * y, k, k, 0.0, 0.0, 0.0])));
    let boundary = polar_dirichlet(&domain, count, &exact)?;
    finish(
        Assembled {
            name: "bird",
            domain,
            grid,
            residual: sine_square_laplace(exact.clone()),
            boundary,
            observations: None,
            exact: Some(exact),
            exact_solves_residual: true,
            lambda: TrainableLambda::none(),
            lambda_true: None,
            training: TrainingConfig::from_ratio(1.0, 99.0, 1e-4, 20_000),
        },
        p,
    )
}

/// Starfish domain `rho <= 1 + 0.5 cos^2(2.5 theta)` with
/// `u_xx + 5 u_yy + k sin(u) u_x = f`.
fn starfish(params: &ProblemParams) -> Result<ProblemDef> {
    let mut p = Params::new("starfish", params);
    let k = p.get("k", 5.0);
    let domain = DomainShape::polar("starfish", |t: f64| 1.0 + 0.5 * (2.5 * t).cos().powi(2))?;
    let grid = polar_grid(&mut p, &domain, 0.02)?;
    let count = p.count("boundary_points", 800)?;
    let exact: ExactFn = Arc::new(move |x, y| {
        jet1(sin_jet([0.5 + x + k * x * y + k * y * y, 1.0 + k * y, k * x + 2.0 * k * y, 0.0, 2.0 * k, k]))
    });
    let forcing = move |x: f64, y: f64| {
        let ph = 0.5 + x + k * x * y + k * y * y;
        -(1.0 + 2.0 * k * y + k * k * (5.0 * x * x + 20.0 * x * y + 21.0 * y * y)) * ph.sin()
            + k * ph.cos() * (10.0 + (1.0 + k * y) * ph.sin().sin())
    };
    let residual = scalar_residual(
        vec![Quantity::U, Quantity::Ux, Quantity::Uxx, Quantity::Uyy],
        0,
        Arc::new(move |b, out| {
            let (u, ux) = (b.get(0, Quantity::U), b.get(0, Quantity::Ux));
            out.values[0] = b.get(0, Quantity::Uxx) + 5.0 * b.get(0, Quantity::Uyy) + k * u.sin() * ux
                - forcing(b.x, b.y);
            *out.partial(0, 0, Quantity::Uxx) = 1.0;
            *out.partial(0, 0, Quantity::Uyy) = 5.0;
            *out.partial(0, 0, Quantity::U) = k * u.cos() * ux;
            *out.partial(0, 0, Quantity::Ux) = k * u.sin();
        }),
    );
    let boundary = polar_dirichlet(&domain, count, &exact)?;
    finish(
        Assembled {
            name: "starfish",
            domain,
            grid,
            residual,
            boundary,
            observations: None,
            exact: Some(exact),
            exact_solves_residual: true,
            lambda: TrainableLambda::none(),
            lambda_true: None,
            training: TrainingConfig::from_ratio(1.0, 99.0, 1e-4, 20_000),
        },
        p,
    )
}

/// `l1 u_xx + l2 u_yy (- rhs)` with trainable or fixed coefficients.
pub fn anisotropic_residual(rhs: f64) -> ResidualSpec {
    scalar_residual(
        vec![Quantity::Uxx, Quantity::Uyy],
        2,
        Arc::new(move |b, out| {
            let (uxx, uyy) = (b.get(0, Quantity::Uxx), b.get(0, Quantity::Uyy));
            let (l1, l2) = (b.lambda[0], b.lambda[1]);
            out.values[0] = l1 * uxx + l2 * uyy - rhs;
            *out.partial(0, 0, Quantity::Uxx) = l1;
            *out.partial(0, 0, Quantity::Uyy) = l2;
            out.d_lambda[0][0] = uxx;
            out.d_lambda[0][1] = uyy;
        }),
    )
}

/// Exact jet of `sin(x) sinh(y / sqrt(ratio))`, a solution of
/// `u_xx + ratio * u_yy = 0`.
pub fn aniso_exact(ratio: f64) -> ExactFn {
    let a = 1.0 / ratio.sqrt();
    Arc::new(move |x, y| {
        let (s, c) = x.sin_cos();
        let (sh, ch) = ((a * y).sinh(), (a * y).cosh());
        let mut j = [0.0; NQ];
        j[0] = s * sh;
        j[1] = c * sh;
        j[2] = a * s * ch;
        j[3] = -s * sh;
        j[4] = a * a * s * sh;
        j[5] = a * c * ch;
        j[6] = j[3] + j[4];
        jet1(j)
    })
}

/// `sin(x + 5y) + exp(-x)`.
pub fn explicit_exact() -> ExactFn {
    Arc::new(|x, y| {
        let mut j = sin_jet([x + 5.0 * y, 1.0, 5.0, 0.0, 0.0, 0.0]);
        let e = (-x).exp();
        j[0] += e;
        j[1] -= e;
        j[3] += e;
        j[6] += e;
        jet1(j)
    })
}

fn unit_square_grid(p: &mut Params) -> Result<GridSpec> {
    rect_grid(p, [0.0, 1.0, 0.0, 1.0], 21, 21)
}

fn noise_from(p: &mut Params, default_std: f64) -> Result<NoiseModel> {
    let std_dev = p.get("noise_std", default_std);
    let seed = p.get("noise_seed", 0.0);
    NoiseModel::gaussian(std_dev, seed as u64)
}

/// Anisotropy estimation from observations of `sin(x) sinh(y/sqrt(ratio))`
/// on the unit square, with `l1` frozen at 1 and `l2` trainable.
fn aniso_inverse(params: &ProblemParams) -> Result<ProblemDef> {
    let mut p = Params::new("aniso_inverse", params);
    let ratio = p.get("ratio", 5.0);
    let l2_init = p.get("lambda2_init", 1.0);
    let grid = unit_square_grid(&mut p)?;
    let noise = noise_from(&mut p, 0.0)?;
    let observations = make_observations(&ObservationKind::Aniso { ratio }, &grid, &noise)?;
    aniso_problem(
        "aniso_inverse",
        grid,
        observations,
        Some(aniso_exact(ratio)),
        TrainableLambda::new(vec![1.0, l2_init], vec![true, false])?,
        Some(vec![1.0, ratio]),
        p,
    )
}

/// Observation-driven problem on the unit square.
fn aniso_problem(
    name: &'static str,
    grid: GridSpec,
    observations: ObservationSet,
    exact: Option<ExactFn>,
    lambda: TrainableLambda,
    lambda_true: Option<Vec<f64>>,
    p: Params,
) -> Result<ProblemDef> {
    finish(
        Assembled {
            name,
            domain: DomainShape::rectangle(grid.x_min, grid.x_max, grid.y_min, grid.y_max),
            grid,
            residual: anisotropic_residual(0.0),
            boundary: Vec::new(),
            observations: Some(observations),
            exact,
            exact_solves_residual: true,
            lambda,
            lambda_true,
            training: TrainingConfig::from_ratio(1.0, 99.0, 2e-4, 40_000),
        },
        p,
    )
    .map(|mut def| {
        // A rough random start costs tens of thousands of epochs to smooth
        // out under the second-order residual.
        def.hidden_init_scale = 0.0;
        def
    })
}

/// Physics-regularized denoising. With `misspecified = 0` the observations
/// come from the anisotropic harmonic and the physics `u_xx + 5 u_yy = 0`
/// is known; with `misspecified = 1` they come from `sin(x+5y) + exp(-x)`
/// and `k1 u_xx + k2 u_yy = 1` is fitted with trainable `k`.
fn denoise(params: &ProblemParams, misspec_default: bool) -> Result<ProblemDef> {
    let mut p = Params::new(if misspec_default { "denoise_misspec" } else { "denoise" }, params);
    let misspecified = p.get("misspecified", if misspec_default { 1.0 } else { 0.0 }) != 0.0;
    let grid = unit_square_grid(&mut p)?;
    let noise = noise_from(&mut p, 0.1)?;
    let (kind, exact, lambda, lambda_true, rhs) = if misspecified {
        (
            ObservationKind::Explicit,
            explicit_exact(),
            TrainableLambda::new(vec![1.0, 1.0], vec![false, false])?,
            None,
            1.0,
        )
    } else {
        (
            ObservationKind::Aniso { ratio: 5.0 },
            aniso_exact(5.0),
            TrainableLambda::new(vec![1.0, 5.0], vec![true, true])?,
            Some(vec![1.0, 5.0]),
            0.0,
        )
    };
    let observations = make_observations(&kind, &grid, &noise)?;
    let mut def = aniso_problem(
        if misspecified { "denoise_misspec" } else { "denoise" },
        grid,
        observations,
        Some(exact),
        lambda,
        lambda_true,
        p,
    )?;
    def.residual = anisotropic_residual(rhs);
    def.exact_solves_residual = !misspecified;
    if misspecified {
        // The reference field reaches 2, beyond the range of tanh.
        def.activation = Activation::Identity;
        def.training = TrainingConfig::from_ratio(1.0, 9.0, 2e-4, 40_000);
    } else {
        def.training = TrainingConfig::from_ratio(9.0, 1.0, 2e-4, 40_000);
    }
    Ok(def)
}
