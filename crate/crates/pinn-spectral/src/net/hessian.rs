//! Dominant Hessian eigenvalue estimation.
//!
//! The Hessian is never formed: Hessian-vector products come from central
//! finite differences of the loss gradient, `Hv = (g(w + e v) - g(w - e v)) / 2e`,
//! and power iteration tracks the Rayleigh quotient until it stabilizes.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerIterResult {
    /// Rayleigh-quotient estimate of the dominant (largest magnitude)
    /// eigenvalue.
    pub lambda: f64,
    pub iterations: usize,
    /// False when `max_iters` ran out before two successive estimates agreed
    /// to the requested tolerance; `lambda` is then the last estimate.
    pub converged: bool,
}

/// Power iteration against a caller-supplied matrix-vector product.
///
/// Convergence requires both that successive Rayleigh quotients differ by at
/// most `tol * max(1, |lambda|)` and that the residual `||Hv - lambda v||`
/// has dropped below `sqrt(tol) * max(1, |lambda|)`. The Rayleigh check alone
/// would falsely settle on spectra with a +-lambda pair (the quotient is
/// stationary there even though the iterate never aligns).
pub fn power_iteration(
    dim: usize,
    mut apply: impl FnMut(&[f64], &mut [f64]),
    max_iters: usize,
    tol: f64,
    seed: u64,
) -> PowerIterResult {
    assert!(dim > 0, "power iteration needs a nonzero dimension");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() - 0.5).collect();
    normalize(&mut v);
    let mut hv = vec![0.0; dim];
    let mut lambda_prev = f64::NAN;
    for it in 1..=max_iters {
        apply(&v, &mut hv);
        let lambda: f64 = v.iter().zip(&hv).map(|(a, b)| a * b).sum();
        let norm = hv.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            // v is (numerically) in the kernel; the dominant eigenvalue along
            // the reachable subspace is zero.
            return PowerIterResult {
                lambda: 0.0,
                iterations: it,
                converged: true,
            };
        }
        let residual = v
            .iter()
            .zip(&hv)
            .map(|(a, b)| (b - lambda * a).powi(2))
            .sum::<f64>()
            .sqrt();
        for (slot, h) in v.iter_mut().zip(&hv) {
            *slot = h / norm;
        }
        let scale = lambda.abs().max(1.0);
        if (lambda - lambda_prev).abs() <= tol * scale && residual <= tol.sqrt() * scale {
            return PowerIterResult {
                lambda,
                iterations: it,
                converged: true,
            };
        }
        lambda_prev = lambda;
    }
    PowerIterResult {
        lambda: lambda_prev,
        iterations: max_iters,
        converged: false,
    }
}

/// Central-difference Hessian-vector product built from a gradient oracle.
pub fn fd_hvp(
    grad: &mut impl FnMut(&[f64]) -> Vec<f64>,
    w: &[f64],
    v: &[f64],
    eps: f64,
) -> Vec<f64> {
    let mut wp: Vec<f64> = w.to_vec();
    let mut wm: Vec<f64> = w.to_vec();
    for i in 0..w.len() {
        wp[i] += eps * v[i];
        wm[i] -= eps * v[i];
    }
    let gp = grad(&wp);
    let gm = grad(&wm);
    gp.iter()
        .zip(&gm)
        .map(|(p, m)| (p - m) / (2.0 * eps))
        .collect()
}

/// Dominant eigenvalue of the loss Hessian at `w`, via power iteration on
/// finite-difference Hessian-vector products. `grad` must return the loss
/// gradient in the flat parameter layout.
pub fn hessian_max_eig(
    mut grad: impl FnMut(&[f64]) -> Vec<f64>,
    w: &[f64],
    probe_eps: f64,
    max_iters: usize,
    tol: f64,
    seed: u64,
) -> PowerIterResult {
    assert!(probe_eps > 0.0 && probe_eps.is_finite(), "bad probe step");
    power_iteration(
        w.len(),
        |v, out| {
            let hv = fd_hvp(&mut grad, w, v, probe_eps);
            out.copy_from_slice(&hv);
        },
        max_iters,
        tol,
        seed,
    )
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    } else {
        v[0] = 1.0;
    }
}
