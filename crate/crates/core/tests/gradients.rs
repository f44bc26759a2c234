//! Finite-difference oracles for every analytic gradient path.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sdkd_core::estimators::{distill_loss, full_distill_grad, pdbs_grad, pdbs_loss};
use sdkd_core::gradcheck::{finite_diff_grad, relative_l2_error};
use sdkd_core::model::{energies_full, energy_param_grad, Activation, ModelParams};

const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-6;

fn random_model(rng: &mut ChaCha8Rng, d: usize, c: usize, hidden: Option<usize>) -> ModelParams {
    let mut m = match hidden {
        None => ModelParams::linear(d, c),
        Some(h) => ModelParams::mlp(d, h, c, Activation::Relu),
    };
    for arr in m.arrays_mut() {
        for v in arr.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
    }
    m
}

fn random_input(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn random_probs(rng: &mut ChaCha8Rng, c: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..c).map(|_| rng.random_range(0.05..1.0)).collect();
    let sum: f64 = raw.iter().sum();
    raw.iter().map(|v| v / sum).collect()
}

#[test]
fn energy_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for trial in 0..10 {
        let d = if trial % 2 == 0 { 2 } else { 5 };
        let hidden = if trial % 3 == 0 { None } else { Some(4) };
        let c = 6;
        let model = random_model(&mut rng, d, c, hidden);
        let x = random_input(&mut rng, d);
        let class = trial % c;
        let analytic = energy_param_grad(&model, &x, class).unwrap();
        let fd = finite_diff_grad(&model, FD_STEP, |m| Ok(energies_full(m, &x)?[class])).unwrap();
        let err = relative_l2_error(&analytic, &fd, 1e-12);
        assert!(err <= FD_TOL, "trial {trial}: relative error {err}");
    }
}

#[test]
fn full_distill_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    // The spec's worked case: linear model, C=3, d=2, lambda=0.5, T=2.
    let model = random_model(&mut rng, 2, 3, None);
    let x = random_input(&mut rng, 2);
    let p = random_probs(&mut rng, 3);
    let (y, t, lambda) = (1, 2.0, 0.5);
    let analytic = full_distill_grad(&model, &x, &p, y, t, lambda).unwrap();
    let fd = finite_diff_grad(&model, FD_STEP, |m| distill_loss(m, &x, &p, y, t, lambda)).unwrap();
    let err = relative_l2_error(&analytic, &fd, 1e-12);
    assert!(err <= FD_TOL, "relative error {err}");
}

#[test]
fn full_distill_gradient_matches_across_lambdas_and_architectures() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for trial in 0..8 {
        let hidden = if trial % 2 == 0 { None } else { Some(3) };
        let model = random_model(&mut rng, 3, 5, hidden);
        let x = random_input(&mut rng, 3);
        let p = random_probs(&mut rng, 5);
        let y = trial % 5;
        let t = [1.0, 2.0, 4.0][trial % 3];
        let lambda = [0.0, 0.3, 1.0][trial % 3];
        let analytic = full_distill_grad(&model, &x, &p, y, t, lambda).unwrap();
        let fd =
            finite_diff_grad(&model, FD_STEP, |m| distill_loss(m, &x, &p, y, t, lambda)).unwrap();
        let err = relative_l2_error(&analytic, &fd, 1e-12);
        assert!(err <= FD_TOL, "trial {trial}: relative error {err}");
    }
}

#[test]
fn pdbs_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for trial in 0..6 {
        let hidden = if trial % 2 == 0 { None } else { Some(4) };
        let model = random_model(&mut rng, 3, 6, hidden);
        let x = random_input(&mut rng, 3);
        let p = random_probs(&mut rng, 6);
        let selected = vec![trial % 6, (trial + 2) % 6, (trial + 4) % 6];
        let t = 2.0;
        let analytic = pdbs_grad(&model, &x, &p, &selected, t).unwrap();
        let fd = finite_diff_grad(&model, FD_STEP, |m| pdbs_loss(m, &x, &p, &selected, t)).unwrap();
        let err = relative_l2_error(&analytic, &fd, 1e-12);
        assert!(err <= FD_TOL, "trial {trial}: relative error {err}");
    }
}
