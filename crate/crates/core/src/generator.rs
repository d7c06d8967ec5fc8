//! Field generator: a trainable hidden field followed by one convolution.
//!
//! With a constant unit input the "deconvolution" stage reduces to a
//! trainable `m x n` matrix plus a scalar bias, so
//! `hidden = w_h + b_h` and `u_hat = a(corr(hidden, w_o) + b_o)`.

use std::fmt::Write as _;
use std::str::FromStr;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PicnError, Result};
use crate::grid::{correlate_valid, correlate_valid_adjoint, Field};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Identity,
    Sine,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Self::Tanh => z.tanh(),
            Self::Identity => z,
            Self::Sine => z.sin(),
        }
    }

    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Self::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Self::Identity => 1.0,
            Self::Sine => z.cos(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Tanh => "tanh",
            Self::Identity => "identity",
            Self::Sine => "sine",
        }
    }
}

impl FromStr for Activation {
    type Err = PicnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Self::Tanh),
            "identity" | "linear" => Ok(Self::Identity),
            "sine" | "sin" => Ok(Self::Sine),
            other => Err(PicnError::InvalidArgument(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PicnModel {
    pub w_h: Array2<f64>,
    pub b_h: f64,
    pub w_o: Array2<f64>,
    pub b_o: f64,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGradients {
    pub g_w_h: Array2<f64>,
    pub g_b_h: f64,
    pub g_w_o: Array2<f64>,
    pub g_b_o: f64,
}

impl ModelGradients {
    pub fn zeros_like(model: &PicnModel) -> Self {
        Self {
            g_w_h: Array2::zeros(model.w_h.dim()),
            g_b_h: 0.0,
            g_w_o: Array2::zeros(model.w_o.dim()),
            g_b_o: 0.0,
        }
    }
}

fn check_shapes(m: usize, n: usize, p: usize, q: usize) -> Result<()> {
    if m == 0 || n == 0 || p == 0 || q == 0 {
        return Err(PicnError::InvalidModel("all dimensions must be positive".into()));
    }
    if p % 2 == 0 || q % 2 == 0 {
        return Err(PicnError::InvalidModel(format!("kernel {p}x{q} must have odd sides")));
    }
    if m < p || n < q {
        return Err(PicnError::InvalidModel(format!(
            "hidden field {m}x{n} is smaller than kernel {p}x{q}"
        )));
    }
    Ok(())
}

/// Uniform initialization in `[-s, s]`, `s = sqrt(1 / (p q))`, zero biases.
pub fn init_params(
    m: usize,
    n: usize,
    p: usize,
    q: usize,
    activation: Activation,
    seed: u64,
) -> Result<PicnModel> {
    check_shapes(m, n, p, q)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = (1.0 / (p * q) as f64).sqrt();
    let w_h = Array2::from_shape_simple_fn((m, n), || rng.random_range(-s..=s));
    let w_o = Array2::from_shape_simple_fn((p, q), || rng.random_range(-s..=s));
    Ok(PicnModel {
        w_h,
        b_h: 0.0,
        w_o,
        b_o: 0.0,
        activation,
    })
}

impl PicnModel {
    pub fn validate(&self) -> Result<()> {
        let (m, n) = self.w_h.dim();
        let (p, q) = self.w_o.dim();
        check_shapes(m, n, p, q)
    }

    pub fn hidden_shape(&self) -> (usize, usize) {
        self.w_h.dim()
    }

    pub fn kernel_shape(&self) -> (usize, usize) {
        self.w_o.dim()
    }

    pub fn output_shape(&self) -> (usize, usize) {
        let (m, n) = self.w_h.dim();
        let (p, q) = self.w_o.dim();
        (m - p + 1, n - q + 1)
    }

    pub fn num_params(&self) -> usize {
        self.w_h.len() + self.w_o.len() + 2
    }

    /// Pre-activation field `corr(hidden, w_o) + b_o`.
    pub fn pre_activation(&self, hidden: &Field) -> Result<Field> {
        let mut pre = correlate_valid(hidden.view(), self.w_o.view())?;
        pre.mapv_inplace(|z| z + self.b_o);
        Ok(pre)
    }

    /// Returns `(hidden, u_hat)`.
    pub fn forward(&self) -> Result<(Field, Field)> {
        let hidden = self.w_h.mapv(|w| w + self.b_h);
        let act = self.activation;
        let u_hat = self.pre_activation(&hidden)?.mapv(|z| act.apply(z));
        Ok((hidden, u_hat))
    }

    pub fn backward(&self, hidden: &Field, u_hat: &Field, dl_du_hat: &Field) -> Result<ModelGradients> {
        if dl_du_hat.dim() != u_hat.dim() || u_hat.dim() != self.output_shape() {
            return Err(PicnError::Shape(format!(
                "upstream gradient {:?} does not match output {:?}",
                dl_du_hat.dim(),
                self.output_shape()
            )));
        }
        if hidden.dim() != self.w_h.dim() {
            return Err(PicnError::Shape("hidden field has the wrong shape".into()));
        }
        let g_pre = match self.activation {
            Activation::Tanh => {
                let mut g = dl_du_hat.clone();
                g.zip_mut_with(u_hat, |g, &u| *g *= 1.0 - u * u);
                g
            }
            Activation::Identity => dl_du_hat.clone(),
            Activation::Sine => {
                let mut g = self.pre_activation(hidden)?;
                g.zip_mut_with(dl_du_hat, |z, &d| *z = d * z.cos());
                g
            }
        };
        let g_b_o = g_pre.sum();
        let g_w_o = correlate_valid(hidden.view(), g_pre.view())?;
        let (m, n) = self.w_h.dim();
        let g_w_h = correlate_valid_adjoint(g_pre.view(), self.w_o.view(), m, n)?;
        let g_b_h = g_w_h.sum();
        Ok(ModelGradients {
            g_w_h,
            g_b_h,
            g_w_o,
            g_b_o,
        })
    }
}

/// Trained parameters of one or more generators plus operator coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub models: Vec<PicnModel>,
    pub lambda: Vec<f64>,
}

const CHECKPOINT_MAGIC: &str = "picn-checkpoint 1";

fn write_matrix(out: &mut String, a: &Array2<f64>) {
    for row in a.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
}

impl Checkpoint {
    /// Text listing: header, per-model shape line, then row-major values.
    /// Values use Rust's shortest round-trip formatting, so parsing the
    /// text restores every double exactly.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{CHECKPOINT_MAGIC}");
        let _ = writeln!(out, "models {}", self.models.len());
        for model in &self.models {
            let (m, n) = model.w_h.dim();
            let (p, q) = model.w_o.dim();
            let _ = writeln!(out, "model {m} {n} {p} {q} {}", model.activation.name());
            write_matrix(&mut out, &model.w_h);
            let _ = writeln!(out, "b_h {:e}", model.b_h);
            write_matrix(&mut out, &model.w_o);
            let _ = writeln!(out, "b_o {:e}", model.b_o);
        }
        let vals: Vec<String> = self.lambda.iter().map(|v| format!("{v:e}")).collect();
        let _ = writeln!(out, "lambda {} {}", self.lambda.len(), vals.join(" "));
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut rd = LineReader::new(text);
        let (ln, magic) = rd.next("header")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(ck_err(ln, format!("expected `{CHECKPOINT_MAGIC}`")));
        }
        let count = rd.keyed("models")?;
        let count = parse_count(count.0, count.1)?;
        let mut models = Vec::with_capacity(count);
        for _ in 0..count {
            let (ln, head) = rd.next("model header")?;
            let toks: Vec<&str> = head.split_whitespace().collect();
            if toks.len() != 6 || toks[0] != "model" {
                return Err(ck_err(ln, "expected `model m n p q activation`".into()));
            }
            let dims = toks[1..5]
                .iter()
                .map(|t| parse_count(ln, t))
                .collect::<Result<Vec<_>>>()?;
            let activation: Activation = toks[5]
                .parse()
                .map_err(|_| ck_err(ln, "bad activation".into()))?;
            let w_h = rd.matrix(dims[0], dims[1])?;
            let (ln, v) = rd.keyed("b_h")?;
            let b_h = parse_value(ln, v)?;
            let w_o = rd.matrix(dims[2], dims[3])?;
            let (ln, v) = rd.keyed("b_o")?;
            let b_o = parse_value(ln, v)?;
            let model = PicnModel {
                w_h,
                b_h,
                w_o,
                b_o,
                activation,
            };
            model.validate().map_err(|e| ck_err(ln, e.to_string()))?;
            models.push(model);
        }
        let (ln, lam) = rd.next("lambda")?;
        let toks: Vec<&str> = lam.split_whitespace().collect();
        if toks.len() < 2 || toks[0] != "lambda" {
            return Err(ck_err(ln, "expected `lambda <count> values...`".into()));
        }
        let k = parse_count(ln, toks[1])?;
        if toks.len() != 2 + k {
            return Err(ck_err(ln, format!("expected {k} lambda values")));
        }
        let lambda = toks[2..]
            .iter()
            .map(|t| parse_value(ln, t))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { models, lambda })
    }
}

fn ck_err(line: usize, msg: String) -> PicnError {
    PicnError::Checkpoint { line, msg }
}

fn parse_value(line: usize, tok: &str) -> Result<f64> {
    tok.parse::<f64>()
        .map_err(|e| ck_err(line, format!("bad number `{tok}`: {e}")))
}

fn parse_count(line: usize, tok: &str) -> Result<usize> {
    tok.parse::<usize>()
        .map_err(|e| ck_err(line, format!("bad count `{tok}`: {e}")))
}

struct LineReader<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> LineReader<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            lines: text.lines().enumerate(),
        }
    }

    fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        self.lines
            .next()
            .map(|(i, l)| (i + 1, l.trim()))
            .ok_or_else(|| ck_err(0, format!("unexpected end of file, expected {what}")))
    }

    /// Reads a `key value` line and returns the value token.
    fn keyed(&mut self, key: &str) -> Result<(usize, &'a str)> {
        let (ln, line) = self.next(key)?;
        match line.split_whitespace().collect::<Vec<_>>()[..] {
            [k, v] if k == key => Ok((ln, v)),
            _ => Err(ck_err(ln, format!("expected `{key} <value>`"))),
        }
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Array2<f64>> {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (ln, row) = self.next("matrix row")?;
            let vals = row
                .split_whitespace()
                .map(|t| parse_value(ln, t))
                .collect::<Result<Vec<_>>>()?;
            if vals.len() != cols {
                return Err(ck_err(ln, format!("expected {cols} values, found {}", vals.len())));
            }
            data.extend(vals);
        }
        Ok(Array2::from_shape_vec((rows, cols), data).expect("row lengths checked"))
    }
}
