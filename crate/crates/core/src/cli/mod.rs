//! Command-line front end: config resolution, run orchestration and
//! file outputs.

mod config;
mod output;

pub use config::{
    GridOverrides, NoiseOverrides, ResolvedRun, RunConfig, SpectrumOverrides, TrainingOverrides, OUT_DIR_ENV,
};
pub use output::{
    band_log_csv, checkpoint_text, field_csv, metrics_line, num, spectrum_csv, RunObserver, CHECKPOINT_FILE,
    CONFIG_ECHO_FILE, FIELD_FILE, GRADCHECK_FILE, METRICS_FILE, REPORT_FILE, SPECTRA_FILE, SPECTRUM_FILE,
    SPECTRUM_LOG_FILE,
};

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::analysis::{denoise, error_field, error_spectrum, estimate_parameters, SpectrumTracker};
use crate::error::{PicnError, Result};
use crate::problems::{builtin_names, get_problem};
use crate::training::{grad_check, train, PicnState, TrainOutcome};

#[derive(Debug, Parser)]
#[command(name = "picn", version, about = "Shallow physics-informed convolutional network solver")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train on a problem and write field, metrics, spectrum and checkpoint.
    Solve(RunArgs),
    /// Estimate operator coefficients from observations.
    Estimate(RunArgs),
    /// Reconstruct a field from noisy observations.
    Denoise(RunArgs),
    /// Train and write the error spectrum of every logged epoch.
    Spectrum(RunArgs),
    /// Compare analytic gradients with finite differences on a reduced grid.
    GradCheck(GradCheckArgs),
    /// Print the builtin problem names.
    ListProblems,
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub problem: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; falls back to $PICN_OUT_DIR, then `picn-out`.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub log_every: Option<usize>,
    #[arg(long)]
    pub k_r: Option<f64>,
    #[arg(long)]
    pub k_g: Option<f64>,
    /// Governing:boundary loss weight ratio, e.g. `9:1`.
    #[arg(long, value_parser = parse_ratio)]
    pub weight_ratio: Option<[f64; 2]>,
    #[arg(long)]
    pub noise_std: Option<f64>,
    #[arg(long)]
    pub noise_seed: Option<u64>,
    #[arg(long)]
    pub nx: Option<usize>,
    #[arg(long)]
    pub ny: Option<usize>,
    #[arg(long)]
    pub spacing: Option<f64>,
    #[arg(long)]
    pub boundary_points: Option<usize>,
    /// Problem parameter override, repeatable.
    #[arg(long = "param", value_name = "KEY=VALUE", value_parser = parse_param)]
    pub params: Vec<(String, f64)>,
    #[arg(long)]
    pub m: Option<f64>,
    #[arg(long)]
    pub k: Option<f64>,
    /// Fit the denoising data with mis-specified physics.
    #[arg(long)]
    pub misspecified: bool,
    /// Number of frequency bands in the spectrum log.
    #[arg(long)]
    pub bands: Option<usize>,
    /// Upper frequency of the last band.
    #[arg(long)]
    pub cutoff: Option<f64>,
    /// No per-epoch progress on stderr.
    #[arg(long, short)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Args)]
pub struct GradCheckArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-5)]
    pub tolerance: f64,
    /// Check the problem at its full size instead of a reduced grid.
    #[arg(long)]
    pub full_size: bool,
}

fn parse_ratio(s: &str) -> std::result::Result<[f64; 2], String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected a:b, got `{s}`"))?;
    let a: f64 = a.trim().parse().map_err(|e| format!("`{a}`: {e}"))?;
    let b: f64 = b.trim().parse().map_err(|e| format!("`{b}`: {e}"))?;
    Ok([a, b])
}

fn parse_param(s: &str) -> std::result::Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected key=value, got `{s}`"))?;
    let v: f64 = v.trim().parse().map_err(|e| format!("`{v}`: {e}"))?;
    Ok((k.trim().to_string(), v))
}

impl RunArgs {
    /// Flag layer as a config.
    pub fn to_config(&self) -> RunConfig {
        let mut cfg = RunConfig {
            problem: self.problem.clone(),
            seed: self.seed,
            out_dir: self.out_dir.clone(),
            ..Default::default()
        };
        cfg.params.extend(self.params.iter().cloned());
        if let Some(m) = self.m {
            cfg.params.insert("m".into(), m);
        }
        if let Some(k) = self.k {
            cfg.params.insert("k".into(), k);
        }
        if self.misspecified {
            cfg.params.insert("misspecified".into(), 1.0);
        }
        cfg.grid = GridOverrides {
            nx: self.nx,
            ny: self.ny,
            spacing: self.spacing,
            boundary_points: self.boundary_points,
        };
        cfg.training = TrainingOverrides {
            learning_rate: self.lr,
            epochs: self.epochs,
            k_r: self.k_r,
            k_g: self.k_g,
            weight_ratio: self.weight_ratio,
            log_every: self.log_every,
            ..Default::default()
        };
        cfg.noise = NoiseOverrides {
            std_dev: self.noise_std,
            seed: self.noise_seed,
        };
        cfg.spectrum = SpectrumOverrides {
            bands: self.bands,
            cutoff: self.cutoff,
        };
        cfg
    }

    /// Flags over the optional config file.
    pub fn merged(&self) -> Result<RunConfig> {
        let file = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        Ok(self.to_config().over(&file))
    }
}

/// Runs one command; returns the process exit code.
pub fn run(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::ListProblems => {
            for name in builtin_names() {
                println!("{name}");
            }
            Ok(0)
        }
        Command::Solve(a) => run_solve(a, "sweep1d", false).map(|_| 0),
        Command::Spectrum(a) => run_solve(a, "sweep1d", true).map(|_| 0),
        Command::Estimate(a) => run_estimate(a).map(|_| 0),
        Command::Denoise(a) => run_denoise(a).map(|_| 0),
        Command::GradCheck(a) => run_grad_check(a),
    }
}

fn prepare(args: &RunArgs, default_problem: &str) -> Result<ResolvedRun> {
    let resolved = args.merged()?.resolve(default_problem)?;
    std::fs::create_dir_all(&resolved.out_dir)?;
    output::write_text(&resolved.out_dir.join(CONFIG_ECHO_FILE), &resolved.to_toml()?)?;
    Ok(resolved)
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    output::write_text(path, &text)
}

fn loss_json(o: &TrainOutcome) -> Value {
    let l = &o.final_loss;
    json!({
        "total": l.total, "l_g": l.l_g, "l_r1": l.l_r1, "l_r2": l.l_r2, "l_obs": l.l_obs,
        "n_omega": l.n_omega, "n_gamma1": l.n_gamma1, "n_gamma2": l.n_gamma2, "n_obs": l.n_obs,
    })
}

/// Writes field, checkpoint and final spectrum; returns the common report.
fn write_common(run: &ResolvedRun, outcome: &TrainOutcome, observer: &mut RunObserver) -> Result<Value> {
    observer.finish()?;
    let problem = &run.problem;
    let dir = &run.out_dir;
    let fields = outcome.state.fields()?;
    output::write_text(&dir.join(FIELD_FILE), &field_csv(problem, &fields))?;
    output::write_text(&dir.join(CHECKPOINT_FILE), &checkpoint_text(&outcome.state))?;
    let mut report = json!({
        "problem": problem.name,
        "seed": run.training.seed,
        "epochs": run.training.epochs,
        "grid": [problem.grid.ny, problem.grid.nx],
        "num_params": outcome.state.num_params(),
        "final_loss": loss_json(outcome),
        "rel_l2": outcome.rel_l2,
        "rel_l2_total": outcome.rel_l2_total,
        "lambda": outcome.state.lambda.values,
    });
    if problem.exact.is_some() {
        let spec = error_spectrum(&error_field(problem, &fields[0], 0));
        output::write_text(&dir.join(SPECTRUM_FILE), &spectrum_csv(&spec))?;
        report["spectrum_parseval_error"] = json!(spec.parseval_error());
    }
    if let Some(t) = &observer.tracker {
        output::write_text(&dir.join(SPECTRUM_LOG_FILE), &band_log_csv(&t.records))?;
        report["band_edges"] = json!(t.edges);
        report["max_parseval_error"] = json!(t.max_parseval_error);
    }
    if let Some(s) = &observer.spectra {
        output::write_text(&dir.join(SPECTRA_FILE), s)?;
    }
    Ok(report)
}

fn observer_for(run: &ResolvedRun, keep_spectra: bool, quiet: bool) -> Result<RunObserver> {
    let tracker = if run.problem.exact.is_some() {
        Some(SpectrumTracker::new(&run.problem, 0, run.spectrum_bands, run.spectrum_cutoff)?)
    } else {
        None
    };
    RunObserver::create(&run.out_dir, tracker, keep_spectra, quiet)
}

fn run_solve(args: &RunArgs, default_problem: &str, keep_spectra: bool) -> Result<Value> {
    let run = prepare(args, default_problem)?;
    let mut obs = observer_for(&run, keep_spectra, args.quiet)?;
    let outcome = train(&run.problem, &run.training, &mut obs)?;
    let report = write_common(&run, &outcome, &mut obs)?;
    write_json(&run.out_dir.join(REPORT_FILE), &report)?;
    summary(&run, &report);
    Ok(report)
}

fn run_estimate(args: &RunArgs) -> Result<Value> {
    let run = prepare(args, "aniso_inverse")?;
    let observations = run.problem.observations.clone().ok_or_else(|| {
        PicnError::InvalidArgument(format!("problem `{}` carries no observations", run.problem.name))
    })?;
    let mut obs = observer_for(&run, false, args.quiet)?;
    let est = estimate_parameters(&run.problem, &observations, &run.training, &mut obs)?;
    let mut report = write_common(&run, &est.outcome, &mut obs)?;
    report["lambda_ratio"] = json!(est.lambda_ratio);
    report["observations"] = json!({
        "count": observations.points.len(),
        "provenance": observations.provenance.to_string(),
    });
    if let Some(t) = &run.problem.lambda_true {
        let truth = t[1] / t[0];
        report["lambda_ratio_true"] = json!(truth);
        report["lambda_ratio_rel_err"] = json!(((est.lambda_ratio - truth) / truth).abs());
    }
    write_json(&run.out_dir.join(REPORT_FILE), &report)?;
    summary(&run, &report);
    Ok(report)
}

fn run_denoise(args: &RunArgs) -> Result<Value> {
    let run = prepare(args, "denoise")?;
    let mut obs = observer_for(&run, false, args.quiet)?;
    let res = denoise(&run.problem, &run.training, &mut obs)?;
    let mut report = write_common(&run, &res.outcome, &mut obs)?;
    report["rmse_vs_clean"] = json!(res.rmse_vs_clean);
    report["noisy_rmse"] = json!(res.noisy_rmse);
    report["laplacian_energy"] = json!(res.laplacian_energy);
    report["noisy_laplacian_energy"] = json!(res.noisy_laplacian_energy);
    if let Some(o) = &run.problem.observations {
        report["observations"] = json!({
            "count": o.points.len(),
            "provenance": o.provenance.to_string(),
        });
    }
    write_json(&run.out_dir.join(REPORT_FILE), &report)?;
    summary(&run, &report);
    Ok(report)
}

/// Grid parameters of the reduced problems used for gradient checks.
pub fn reduced_grid_params(is_1d: bool) -> Vec<(&'static str, f64)> {
    if is_1d {
        vec![("nx", 28.0)]
    } else {
        vec![("nx", 6.0), ("ny", 6.0)]
    }
}

fn run_grad_check(args: &GradCheckArgs) -> Result<i32> {
    let mut cfg = args.run.merged()?;
    if !args.full_size {
        let name = cfg.problem.clone().unwrap_or_else(|| "sweep1d".into());
        let probe = get_problem(&name, &cfg.params)?;
        cfg.grid.spacing = None;
        for (key, v) in reduced_grid_params(probe.grid.is_1d()) {
            match key {
                "nx" => cfg.grid.nx = Some(v as usize),
                _ => cfg.grid.ny = Some(v as usize),
            }
        }
    }
    let run = cfg.resolve("sweep1d")?;
    std::fs::create_dir_all(&run.out_dir)?;
    output::write_text(&run.out_dir.join(CONFIG_ECHO_FILE), &run.to_toml()?)?;
    let state = PicnState::init_random(&run.problem, run.training.seed)?;
    let report = grad_check(&run.problem, &state, &run.training, args.tolerance)?;

    let mut csv = String::from("name,analytic,numeric,rel_err\n");
    for e in &report.entries {
        let _ = writeln!(csv, "{},{},{},{}", e.name, num(e.analytic), num(e.numeric), num(e.rel_err));
    }
    output::write_text(&run.out_dir.join(GRADCHECK_FILE), &csv)?;
    let worst = report.worst();
    let json = json!({
        "problem": run.problem.name,
        "grid": [run.problem.grid.ny, run.problem.grid.nx],
        "num_params": report.entries.len(),
        "tolerance": report.tolerance,
        "max_rel_err": report.max_rel_err,
        "worst": worst.map(|w| w.name.clone()),
        "failures": report.failures().map(|e| e.name.clone()).collect::<Vec<_>>(),
        "passed": report.passed,
    });
    write_json(&run.out_dir.join(REPORT_FILE), &json)?;
    println!(
        "{}: {} parameters, max relative error {:.3e} ({}) -> {}",
        run.problem.name,
        report.entries.len(),
        report.max_rel_err,
        worst.map_or("-", |w| w.name.as_str()),
        if report.passed { "PASS" } else { "FAIL" }
    );
    Ok(if report.passed { 0 } else { 2 })
}

fn summary(run: &ResolvedRun, report: &Value) {
    let mut line = format!("{}: wrote {}", run.problem.name, run.out_dir.display());
    for key in ["rel_l2_total", "lambda_ratio", "rmse_vs_clean"] {
        if let Some(v) = report.get(key).and_then(Value::as_f64) {
            let _ = write!(line, "  {key} {v:.4e}");
        }
    }
    println!("{line}");
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_and_param_parsing() {
        assert_eq!(parse_ratio("99:1").unwrap(), [99.0, 1.0]);
        assert!(parse_ratio("99").is_err());
        assert_eq!(parse_param("m=2").unwrap(), ("m".to_string(), 2.0));
        assert!(parse_param("m").is_err());
    }

    #[test]
    fn cli_parses_flags() {
        let cli = Cli::try_parse_from(["picn", "solve", "--problem", "sine_ode", "--m", "2", "--weight-ratio", "3:1"]).unwrap();
        let Command::Solve(a) = cli.command else { panic!() };
        let cfg = a.to_config();
        assert_eq!(cfg.params["m"], 2.0);
        assert_eq!(cfg.training.weight_ratio, Some([3.0, 1.0]));
        assert!(Cli::try_parse_from(["picn", "solve", "--bogus"]).is_err());
    }
}
