use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use picn_core::generator::{init_params, Activation, PicnModel};
use picn_core::grid::Field;

fn objective(model: &PicnModel, weights: &Field) -> f64 {
    let (_, u) = model.forward().unwrap();
    u.iter().zip(weights.iter()).map(|(a, b)| a * b).sum()
}

fn rel(a: f64, b: f64) -> f64 {
    let s = a.abs().max(b.abs());
    if s < 1e-8 {
        (a - b).abs()
    } else {
        (a - b).abs() / s
    }
}

#[test]
fn backward_matches_finite_differences_over_random_models() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let acts = [Activation::Tanh, Activation::Identity, Activation::Sine];
    for trial in 0..20 {
        let (p, q) = if trial % 3 == 0 { (1, 3) } else { (3, 3) };
        let m = p + rng.random_range(0..5);
        let n = q + rng.random_range(0..6);
        let act = acts[trial % 3];
        let mut model = init_params(m, n, p, q, act, trial as u64).unwrap();
        model.b_h = rng.random_range(-0.5..0.5);
        model.b_o = rng.random_range(-0.5..0.5);
        let out = model.output_shape();
        let weights = Field::from_shape_simple_fn(out, || rng.random_range(-1.0..1.0));

        let (hidden, u) = model.forward().unwrap();
        let g = model.backward(&hidden, &u, &weights).unwrap();

        let h = 1e-6;
        let check = |analytic: f64, set: &mut dyn FnMut(&mut PicnModel, f64), what: String| {
            let mut plus = model.clone();
            set(&mut plus, h);
            let mut minus = model.clone();
            set(&mut minus, -h);
            let numeric = (objective(&plus, &weights) - objective(&minus, &weights)) / (2.0 * h);
            let e = rel(analytic, numeric);
            assert!(e < 1e-6, "trial {trial} {what}: analytic {analytic} numeric {numeric} (rel {e})");
        };
        for i in 0..m {
            for j in 0..n {
                check(g.g_w_h[[i, j]], &mut |md, d| md.w_h[[i, j]] += d, format!("w_h[{i},{j}]"));
            }
        }
        for i in 0..p {
            for j in 0..q {
                check(g.g_w_o[[i, j]], &mut |md, d| md.w_o[[i, j]] += d, format!("w_o[{i},{j}]"));
            }
        }
        check(g.g_b_h, &mut |md, d| md.b_h += d, "b_h".into());
        check(g.g_b_o, &mut |md, d| md.b_o += d, "b_o".into());
    }
}

#[test]
fn output_covers_hidden_minus_kernel() {
    let model = init_params(7, 12, 3, 3, Activation::Tanh, 1).unwrap();
    assert_eq!(model.output_shape(), (5, 10));
    let (hidden, u) = model.forward().unwrap();
    assert_eq!(hidden.dim(), (7, 12));
    assert_eq!(u.dim(), (5, 10));
    assert!(u.iter().all(|v| v.abs() < 1.0));
}
