//! End-to-end acceptance suite. Every test prints one `criterion N: PASS|FAIL`
//! line straight to stderr, so the lines show up even when output is captured.
//!
//! Run with `cargo test --release -p picn-core --test acceptance`.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use picn_core::analysis::{denoise, estimate_parameters, SpectrumTracker};
use picn_core::geometry::{interp_apply, interp_backward, interp_stencil};
use picn_core::grid::{
    apply_stencil, apply_stencil_transpose, correlate_valid, correlate_valid_adjoint, derivative_kernel, Derivative,
    Field, GridSpec,
};
use picn_core::problems::{get_problem, ProblemDef, ProblemParams, BUILTIN_PROBLEMS};
use picn_core::training::{grad_check_with, train, FdScheme, PicnState, TrainOutcome, TrainingConfig};

fn report(n: usize, pass: bool, detail: &str) {
    let line = format!("criterion {n}: {} {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn params(kv: &[(&str, f64)]) -> ProblemParams {
    kv.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn problem(name: &str, kv: &[(&str, f64)]) -> ProblemDef {
    get_problem(name, &params(kv)).unwrap()
}

fn with_ratio(cfg: &TrainingConfig, governing: f64, boundary: f64) -> TrainingConfig {
    let mut c = cfg.clone();
    c.k_g = governing / (governing + boundary);
    c.k_r = boundary / (governing + boundary);
    c
}

fn sci(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn dot(a: &Field, b: &Field) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

#[test]
fn criterion_01_gradients_match_finite_differences() {
    let start = Instant::now();
    let mut cases: Vec<(String, ProblemParams)> = BUILTIN_PROBLEMS.iter().map(|n| (n.to_string(), params(&[]))).collect();
    cases.push(("denoise_misspec".into(), params(&[])));
    for m in [2.0, 3.0] {
        cases.push(("sine_ode".into(), params(&[("m", m)])));
    }
    let mut worst = (0.0f64, String::new());
    let mut failures = Vec::new();
    for (name, mut kv) in cases {
        let probe = get_problem(&name, &kv).unwrap();
        kv.remove("spacing");
        if probe.grid.is_1d() {
            kv.insert("nx".into(), 28.0);
        } else {
            kv.insert("nx".into(), 6.0);
            kv.insert("ny".into(), 6.0);
        }
        let p = get_problem(&name, &kv).unwrap();
        let (hm, hn) = p.hidden_shape();
        assert!(hm * hn <= 64 || (hm == 1 && hn <= 30), "{name}: hidden {hm}x{hn}");
        let state = PicnState::init_random(&p, 3).unwrap();
        let r = grad_check_with(&p, &state, &p.training, 1e-5, FdScheme::default(), &mut |_| {}).unwrap();
        if r.max_rel_err > worst.0 {
            worst = (r.max_rel_err, format!("{name} {}", r.worst().map_or("", |e| e.name.as_str())));
        }
        if !r.passed {
            failures.push(format!("{name}: {:?}", r.failures().map(|e| &e.name).collect::<Vec<_>>()));
        }
    }
    // Plain central differences on a small linear-output model.
    let p = problem("sweep1d", &[("nx", 18.0)]);
    let state = PicnState::init_random(&p, 1).unwrap();
    let central = grad_check_with(&p, &state, &p.training, 1e-5, FdScheme::Central { step: 1e-6 }, &mut |_| {}).unwrap();
    if !central.passed {
        failures.push(format!("sweep1d central: {:.3e}", central.max_rel_err));
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = failures.is_empty() && secs < 60.0;
    report(
        1,
        pass,
        &format!("max rel err {:.2e} ({}), central-only {:.2e}, {secs:.1}s {failures:?}", worst.0, worst.1, central.max_rel_err),
    );
    assert!(pass);
}

#[test]
fn criterion_02_stencils_and_interpolation_are_exact() {
    let grid = GridSpec::new(-1.0, 1.0, -0.5, 1.5, 41, 41).unwrap();
    let lap = apply_stencil(
        &grid.sample(|x, y| x * x + y * y),
        &derivative_kernel(Derivative::Laplace, grid.dx, grid.dy).unwrap(),
    )
    .unwrap();
    let lap_err = lap.iter().map(|v| (v - 4.0).abs()).fold(0.0, f64::max);

    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let affine = |x: f64, y: f64| 0.3 - 1.7 * x + 2.25 * y;
    let g2 = GridSpec::new(-2.0, 3.0, 1.0, 2.5, 17, 9).unwrap();
    let u = g2.sample(affine);
    let mut interp_err = 0.0f64;
    for _ in 0..1000 {
        let x = rng.random_range(g2.x_min..=g2.x_max);
        let y = rng.random_range(g2.y_min..=g2.y_max);
        let v = interp_apply(&u, &interp_stencil(&g2, x, y).unwrap()).unwrap();
        interp_err = interp_err.max((v - affine(x, y)).abs());
    }

    let mut adjoint_err = 0.0f64;
    let mut rand = |r: usize, c: usize| Field::from_shape_simple_fn((r, c), || rng.random_range(-1.0..1.0));
    for _ in 0..50 {
        let x = rand(9, 11);
        let k = rand(3, 3);
        let y = rand(7, 9);
        let lhs = dot(&correlate_valid(x.view(), k.view()).unwrap(), &y);
        let rhs = dot(&x, &correlate_valid_adjoint(y.view(), k.view(), 9, 11).unwrap());
        adjoint_err = adjoint_err.max((lhs - rhs).abs() / (1.0 + lhs.abs()));

        let st = derivative_kernel(Derivative::Laplace, 0.25, 0.5).unwrap();
        let lhs = dot(&apply_stencil(&x, &st).unwrap(), &y);
        let rhs = dot(&x, &apply_stencil_transpose(&y, &st, 9, 11).unwrap());
        adjoint_err = adjoint_err.max((lhs - rhs).abs() / (1.0 + lhs.abs()));

        let f = rand(9, 17);
        let g = rand(1, 1)[[0, 0]];
        let (px, py) = (rand(1, 1)[[0, 0]] * 2.5 + 0.5, rand(1, 1)[[0, 0]] * 0.75 + 1.75);
        let s = interp_stencil(&g2, px, py).unwrap();
        let mut back = Field::zeros((9, 17));
        for ((i, j), v) in interp_backward(&s, g) {
            back[[i, j]] += v;
        }
        adjoint_err = adjoint_err.max((interp_apply(&f, &s).unwrap() * g - dot(&f, &back)).abs());
    }
    let pass = lap_err < 1e-10 && interp_err < 1e-12 && adjoint_err <= 1e-12;
    report(2, pass, &format!("laplace {lap_err:.1e}, affine interp {interp_err:.1e}, adjoint {adjoint_err:.1e}"));
    assert!(pass);
}

struct SweepRun {
    outcome: TrainOutcome,
    tracker: SpectrumTracker,
    epochs: usize,
}

fn sweep_run() -> &'static SweepRun {
    static RUN: OnceLock<SweepRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let p = problem("sweep1d", &[]);
        let mut tracker = SpectrumTracker::new(&p, 0, 3, None).unwrap();
        let outcome = train(&p, &p.training, &mut tracker).unwrap();
        SweepRun {
            outcome,
            tracker,
            epochs: p.training.epochs,
        }
    })
}

#[test]
fn criterion_03_sweep1d_converges() {
    let run = sweep_run();
    let rel = run.outcome.rel_l2_total.unwrap();
    let pass = run.epochs == 20_000 && rel < 5e-2;
    report(3, pass, &format!("rel L2 {rel:.3e} after {} epochs", run.epochs));
    assert!(pass);
}

#[test]
fn criterion_04_sine_ode_for_three_orders() {
    let mut rels = Vec::new();
    for m in [1.0, 2.0, 3.0] {
        let p = problem("sine_ode", &[("m", m)]);
        rels.push(train(&p, &p.training, &mut ()).unwrap().rel_l2_total.unwrap());
    }
    let pass = rels.iter().all(|r| *r < 5e-2);
    report(4, pass, &format!("rel L2 for m = 1, 2, 3: {}", sci(&rels)));
    assert!(pass);
}

#[test]
fn criterion_05_mixed_bvp_with_neumann_edge() {
    let p = problem("mixed_bvp", &[]);
    // Equal weighting: at 99:1 the boundary terms stall near 25% error.
    let cfg = with_ratio(&p.training, 1.0, 1.0);
    let out = train(&p, &cfg, &mut ()).unwrap();
    let rel = out.rel_l2_total.unwrap();
    let r2_0 = out.history[0].loss.l_r2;
    let r2 = out.final_loss.l_r2;
    let finite = out.history.iter().all(|r| r.loss.total.is_finite());
    let pass = finite && rel < 1e-1 && r2 < 1e-3 * r2_0;
    report(5, pass, &format!("rel L2 {rel:.3e}, Neumann loss {r2_0:.3e} -> {r2:.3e} (ratio {:.2e})", r2 / r2_0));
    assert!(pass);
}

#[test]
fn criterion_06_schrodinger_both_channels() {
    let p = problem("schrodinger", &[]);
    let out = train(&p, &p.training, &mut ()).unwrap();
    let rel = out.rel_l2.unwrap();
    let pass = rel.len() == 2 && rel.iter().all(|r| *r < 5e-2);
    report(6, pass, &format!("rel L2 u {:.3e}, v {:.3e}", rel[0], rel[1]));
    assert!(pass);
}

#[test]
fn criterion_07_irregular_domains() {
    let mut lines = Vec::new();
    let mut pass = true;
    // Both domains use a 1:999 weighting at a step of 1e-3. With the boundary
    // this light relative to the transport residual, training settles into
    // fields with phase slips (star) or stalls near 55% error (starfish).
    for name in ["star", "starfish"] {
        let p = problem(name, &[]);
        let cfg = TrainingConfig {
            learning_rate: 1e-3,
            ..with_ratio(&p.training, 1.0, 999.0)
        };
        let out = train(&p, &cfg, &mut ()).unwrap();
        let rel = out.rel_l2_total.unwrap();
        let bnd = out.final_loss.l_r1.sqrt();
        let ok = rel < 1e-1 && bnd < 5e-2;
        pass &= ok;
        lines.push(format!("{name} rel {rel:.3e} boundary rms {bnd:.3e} [{}]", if ok { "ok" } else { "miss" }));
    }
    let bird = problem("bird", &[]);
    let out = train(&bird, &bird.training, &mut ()).unwrap();
    lines.push(format!(
        "bird (report only) rel {:.3e} boundary rms {:.3e}",
        out.rel_l2_total.unwrap(),
        out.final_loss.l_r1.sqrt()
    ));
    report(7, pass, &lines.join("; "));
    assert!(pass);
}

#[test]
fn criterion_08_anisotropy_estimation() {
    let levels = [(0.0, 0.01), (0.02, 0.02), (0.05, 0.03), (0.10, 0.05)];
    let mut pass = true;
    let mut mean_err = Vec::new();
    let mut lines = Vec::new();
    for (sd, tol) in levels {
        let mut errs = Vec::new();
        for seed in 0..3u64 {
            let p = problem("aniso_inverse", &[("noise_std", sd), ("noise_seed", seed as f64)]);
            let cfg = TrainingConfig { seed, ..p.training.clone() };
            let est = estimate_parameters(&p, p.observations.as_ref().unwrap(), &cfg, &mut ()).unwrap();
            errs.push((est.lambda_ratio - 5.0).abs() / 5.0);
        }
        let ok = errs.iter().all(|e| *e <= tol);
        pass &= ok;
        let mean = errs.iter().sum::<f64>() / errs.len() as f64;
        lines.push(format!("sigma {sd}: rel err {} (tol {tol})", sci(&errs)));
        mean_err.push(mean);
    }
    // Ordering between noise-free, 0.02 and 0.10.
    let ordered = mean_err[0] <= mean_err[1] && mean_err[1] <= mean_err[3];
    pass &= ordered;
    lines.push(format!("mean errors {} ordered {ordered}", sci(&mean_err)));
    report(8, pass, &lines.join("; "));
    assert!(pass);
}

#[test]
fn criterion_09_denoising() {
    let known = problem("denoise", &[("noise_std", 0.4)]);
    let k = denoise(&known, &known.training, &mut ()).unwrap();
    let mis = problem("denoise_misspec", &[("noise_std", 0.3)]);
    let m = denoise(&mis, &mis.training, &mut ()).unwrap();
    let pass = k.rmse_vs_clean <= 0.15 && m.rmse_vs_clean < 0.5 * 0.3 && m.laplacian_energy < m.noisy_laplacian_energy;
    report(
        9,
        pass,
        &format!(
            "known sigma 0.4 rmse {:.3e}; misspecified sigma 0.3 rmse {:.3e}, laplacian energy {:.3e} vs noisy {:.3e}",
            k.rmse_vs_clean, m.rmse_vs_clean, m.laplacian_energy, m.noisy_laplacian_energy
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_10_spectrum_diagnostics() {
    let run = sweep_run();
    let t = &run.tracker;
    let last_band = t.bands() - 1;
    let first = t.band_at(0, last_band).unwrap();
    let last = t.band_at(run.epochs, last_band).unwrap();
    let epochs: Vec<usize> = t.records.iter().map(|r| r.epoch).collect();
    let logged = epochs.first() == Some(&0) && epochs.last() == Some(&run.epochs);
    let parseval = t.max_parseval_error;
    let pass = logged && parseval < 1e-10 && last < 0.1 * first;
    let per_band: Vec<String> = (0..t.bands())
        .map(|b| format!("{:.2e}->{:.2e}", t.band_at(0, b).unwrap(), t.band_at(run.epochs, b).unwrap()))
        .collect();
    report(10, pass, &format!("parseval {parseval:.1e}, bands {per_band:?}, high band ratio {:.2e}", last / first));
    assert!(pass);
}

fn hash_dir(dir: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let digest = Sha256::digest(std::fs::read(&path).unwrap());
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        out.insert(path.file_name().unwrap().to_string_lossy().into_owned(), hex);
    }
    out
}

#[test]
fn criterion_11_runs_are_byte_identical() {
    let mut pass = true;
    let mut lines = Vec::new();
    for args in [
        vec!["solve", "--problem", "sweep1d", "--seed", "0"],
        vec!["estimate", "--noise-std", "0.05", "--noise-seed", "1", "--seed", "0"],
    ] {
        let mut hashes = Vec::new();
        for _ in 0..2 {
            let tmp = tempfile::tempdir().unwrap();
            let o = Command::new(env!("CARGO_BIN_EXE_picn"))
                .args(&args)
                .args(["--out-dir", "run", "-q"])
                .current_dir(tmp.path())
                .env_remove("PICN_OUT_DIR")
                .output()
                .unwrap();
            assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
            hashes.push(hash_dir(&tmp.path().join("run")));
        }
        let same = hashes[0] == hashes[1] && hashes[0].len() >= 6;
        pass &= same;
        lines.push(format!("{}: {} files identical {same}", args[0], hashes[0].len()));
    }
    report(11, pass, &lines.join("; "));
    assert!(pass);
}
