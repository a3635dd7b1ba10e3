//! Finite-difference oracle for the jet engine.
//!
//! The jet forward pass claims exact first and pure second input derivatives,
//! and the reverse sweep claims exact weight gradients of u, u_x, and u_xx.
//! Both claims are checked here against central finite differences over a
//! population of random architectures and evaluation points.

use ndarray::Array2;
use pinn_spectral::net::{
    backward_rows, forward_batch, forward_jet, grad_of_observable, init_params, BasicObservable,
    JetTape, MlpConfig, MlpParams, SeedBatch,
};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rel_close(a: f64, b: f64, tol: f64, floor: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(floor)
}

fn random_config(rng: &mut ChaCha8Rng) -> MlpConfig {
    let input_dim = if rng.random::<f64>() < 0.5 { 1 } else { 2 };
    let depth = 1 + (rng.random::<u32>() % 2) as usize;
    let hidden = (0..depth)
        .map(|_| 3 + (rng.random::<u32>() % 14) as usize)
        .collect();
    MlpConfig::new(input_dim, hidden)
}

fn random_point(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| 4.0 * rng.random::<f64>() - 2.0).collect()
}

/// u_xj and u_xjxj against central differences of the network value.
#[test]
fn jet_input_derivatives_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xD1FF);
    let mut checked = 0;
    for case in 0..60 {
        let cfg = random_config(&mut rng);
        let params = init_params(&cfg, 1000 + case).unwrap();
        let x = random_point(&mut rng, cfg.input_dim);
        let jet = forward_jet(&cfg, &params, &x, 2).unwrap();

        let u_at = |pt: &[f64]| forward_jet(&cfg, &params, pt, 0).unwrap().value;
        for j in 0..cfg.input_dim {
            let h1 = 1e-4;
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h1;
            xm[j] -= h1;
            let fd1 = (u_at(&xp) - u_at(&xm)) / (2.0 * h1);
            assert!(
                rel_close(jet.d1[j], fd1, 1e-4, 1e-7),
                "case {case} d1[{j}]: jet {} vs fd {}",
                jet.d1[j],
                fd1
            );

            let h2 = 1e-3;
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h2;
            xm[j] -= h2;
            let fd2 = (u_at(&xp) - 2.0 * u_at(&x) + u_at(&xm)) / (h2 * h2);
            assert!(
                rel_close(jet.d2[j], fd2, 1e-4, 1e-6),
                "case {case} d2[{j}]: jet {} vs fd {}",
                jet.d2[j],
                fd2
            );
            checked += 2;
        }
    }
    assert!(checked >= 100, "only {checked} derivative checks ran");
}

/// Weight gradients of u, u_x, u_xx against central differences in each
/// parameter, over >= 100 random (architecture, point, observable) triples.
#[test]
fn observable_weight_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED);
    let mut triples = 0;
    for case in 0..40 {
        let cfg = random_config(&mut rng);
        let params = init_params(&cfg, 2000 + case).unwrap();
        let x = random_point(&mut rng, cfg.input_dim);
        let flat = params.flatten();

        let observables: Vec<BasicObservable> = {
            let mut v = vec![BasicObservable::U];
            for j in 0..cfg.input_dim {
                v.push(BasicObservable::DuDx(j));
                v.push(BasicObservable::D2uDx2(j));
            }
            v
        };

        for obs in observables {
            let grad = grad_of_observable(&cfg, &params, &x, &obs).unwrap();
            let eval = |w: &[f64]| {
                let p = MlpParams::from_flat(&cfg, w).unwrap();
                let jet = forward_jet(&cfg, &p, &x, 2).unwrap();
                match obs {
                    BasicObservable::U => jet.value,
                    BasicObservable::DuDx(j) => jet.d1[j],
                    BasicObservable::D2uDx2(j) => jet.d2[j],
                }
            };
            let h = 1e-5;
            // Probe a deterministic subset of coordinates to keep the suite
            // fast; cover every layer block via stride.
            let stride = (flat.len() / 23).max(1);
            for i in (0..flat.len()).step_by(stride) {
                let mut wp = flat.clone();
                let mut wm = flat.clone();
                wp[i] += h;
                wm[i] -= h;
                let fd = (eval(&wp) - eval(&wm)) / (2.0 * h);
                assert!(
                    rel_close(grad[i], fd, 1e-5, 1e-6),
                    "case {case} {obs:?} coord {i}: grad {} vs fd {}",
                    grad[i],
                    fd
                );
            }
            triples += 1;
        }
    }
    assert!(triples >= 100, "only {triples} observable triples ran");
}

/// The per-point Jacobian path must agree with the one-point gradient path.
#[test]
fn jacobian_rows_match_single_point_gradients() {
    let cfg = MlpConfig::new(2, vec![9, 6]);
    let params = init_params(&cfg, 77).unwrap();
    let pts = vec![[0.2, 0.8], [2.0, -1.0], [-0.4, 0.1], [1.1, 1.9]];
    let xs = Array2::from_shape_vec((4, 2), pts.concat()).unwrap();

    let mut tape = JetTape::new();
    let _ = forward_batch(&cfg, &params, xs.view(), 2, &mut tape);
    // Row p seeded with that point's u_xx0 observable.
    let mut seeds = SeedBatch::zeros(4, 2, 2);
    for i in 0..4 {
        seeds.d2[(i, 0)] = 1.0;
    }
    let rows = backward_rows(&cfg, &params, &mut tape, &seeds);
    for (i, pt) in pts.iter().enumerate() {
        let g = grad_of_observable(&cfg, &params, pt, &BasicObservable::D2uDx2(0)).unwrap();
        for (k, gk) in g.iter().enumerate() {
            assert!(
                (rows[(i, k)] - gk).abs() <= 1e-13 * (1.0 + gk.abs()),
                "row {i} coord {k}"
            );
        }
    }
}
