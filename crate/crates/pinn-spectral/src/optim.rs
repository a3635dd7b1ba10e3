//! First-order optimizers on flat parameter vectors, plus small calculators
//! tied to them: the stable-learning-rate bound, the physical-to-discrete
//! momentum map, the per-coordinate gradient variance ratio, and the
//! band-limited loss bound.
//!
//! SGD with momentum is the parameter-delta form
//! `w_{t+1} = w_t + alpha (w_t - w_{t-1}) - eta g_t` (with `w_{-1} = w_0`),
//! kept internally as a velocity `v_t = w_t - w_{t-1}`. Adam is the standard
//! bias-corrected moment recursion with epsilon added after the square root.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum OptimError {
    #[error("gradient length {got} does not match parameter length {expect}")]
    DimMismatch { got: usize, expect: usize },
    #[error("invalid optimizer input: {0}")]
    BadParam(String),
}

fn default_alpha() -> f64 {
    0.9
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OptimizerConfig {
    Sgd {
        eta: f64,
    },
    Sgdm {
        eta: f64,
        #[serde(default = "default_alpha")]
        alpha: f64,
    },
    Adam {
        eta: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

impl OptimizerConfig {
    pub fn eta(&self) -> f64 {
        match *self {
            OptimizerConfig::Sgd { eta }
            | OptimizerConfig::Sgdm { eta, .. }
            | OptimizerConfig::Adam { eta, .. } => eta,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerConfig::Sgd { .. } => "sgd",
            OptimizerConfig::Sgdm { .. } => "sgdm",
            OptimizerConfig::Adam { .. } => "adam",
        }
    }
}

/// Mutable optimizer state sized to the parameter count.
#[derive(Debug, Clone)]
pub enum OptimizerState {
    Sgd,
    Sgdm {
        velocity: Vec<f64>,
    },
    Adam {
        m: Vec<f64>,
        v: Vec<f64>,
        step: u64,
    },
}

impl OptimizerState {
    pub fn new(config: &OptimizerConfig, param_count: usize) -> Self {
        match config {
            OptimizerConfig::Sgd { .. } => OptimizerState::Sgd,
            OptimizerConfig::Sgdm { .. } => OptimizerState::Sgdm {
                velocity: vec![0.0; param_count],
            },
            OptimizerConfig::Adam { .. } => OptimizerState::Adam {
                m: vec![0.0; param_count],
                v: vec![0.0; param_count],
                step: 0,
            },
        }
    }
}

/// One optimizer update in place. `w` and `grad` must have the length the
/// state was built for.
pub fn optimizer_step(
    config: &OptimizerConfig,
    state: &mut OptimizerState,
    w: &mut [f64],
    grad: &[f64],
) -> Result<(), OptimError> {
    if grad.len() != w.len() {
        return Err(OptimError::DimMismatch {
            got: grad.len(),
            expect: w.len(),
        });
    }
    match (config, state) {
        (OptimizerConfig::Sgd { eta }, OptimizerState::Sgd) => {
            for (wi, gi) in w.iter_mut().zip(grad) {
                *wi -= eta * gi;
            }
        }
        (OptimizerConfig::Sgdm { eta, alpha }, OptimizerState::Sgdm { velocity }) => {
            if velocity.len() != w.len() {
                return Err(OptimError::DimMismatch {
                    got: velocity.len(),
                    expect: w.len(),
                });
            }
            for ((wi, gi), vi) in w.iter_mut().zip(grad).zip(velocity.iter_mut()) {
                *vi = alpha * *vi - eta * gi;
                *wi += *vi;
            }
        }
        (
            OptimizerConfig::Adam {
                eta,
                beta1,
                beta2,
                eps,
            },
            OptimizerState::Adam { m, v, step },
        ) => {
            if m.len() != w.len() {
                return Err(OptimError::DimMismatch {
                    got: m.len(),
                    expect: w.len(),
                });
            }
            *step += 1;
            let t = *step as i32;
            let bc1 = 1.0 - beta1.powi(t);
            let bc2 = 1.0 - beta2.powi(t);
            for (((wi, gi), mi), vi) in w.iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *wi -= eta * m_hat / (v_hat.sqrt() + eps);
            }
        }
        _ => {
            return Err(OptimError::BadParam(
                "optimizer state does not match config kind".into(),
            ))
        }
    }
    Ok(())
}

/// Momentum coefficient from the damped-oscillator parameters:
/// `alpha = m / (m + mu dt)`.
pub fn alpha_from_physical(m: f64, mu: f64, dt: f64) -> Result<f64, OptimError> {
    if !(m.is_finite() && m > 0.0) || !(dt.is_finite() && dt > 0.0) {
        return Err(OptimError::BadParam(format!(
            "need m > 0 and dt > 0, got m={m}, dt={dt}"
        )));
    }
    if !(mu.is_finite() && mu >= 0.0) {
        return Err(OptimError::BadParam(format!("need mu >= 0, got {mu}")));
    }
    Ok(m / (m + mu * dt))
}

/// Learning rate from the same leapfrog discretization that yields
/// `alpha_from_physical`: `eta = dt^2 / (m + mu dt)`. The continuous model
/// fixes only alpha; this eta is the unique choice that makes the discrete
/// two-step recursion a consistent integrator of the oscillator, and it can
/// always be overridden explicitly.
pub fn eta_from_physical(m: f64, mu: f64, dt: f64) -> Result<f64, OptimError> {
    alpha_from_physical(m, mu, dt)?;
    Ok(dt * dt / (m + mu * dt))
}

/// Largest provably convergent gradient-descent rate for the composite loss,
/// `1 / (lambda_b_max + lambda_r_max)`.
pub fn max_stable_lr(lambda_b_max: f64, lambda_r_max: f64) -> Result<f64, OptimError> {
    if !(lambda_b_max.is_finite() && lambda_b_max > 0.0)
        || !(lambda_r_max.is_finite() && lambda_r_max > 0.0)
    {
        return Err(OptimError::BadParam(format!(
            "eigenvalue estimates must be positive, got ({lambda_b_max}, {lambda_r_max})"
        )));
    }
    Ok(1.0 / (lambda_b_max + lambda_r_max))
}

/// Per-coordinate ratio of population gradient variance to squared mean
/// gradient across samples. Coordinates whose mean magnitude falls below
/// 1e-12 report `+inf` (the ratio is undefined there).
pub fn variance_ratio(per_sample_grads: &[Vec<f64>]) -> Result<Vec<f64>, OptimError> {
    let n = per_sample_grads.len();
    if n < 2 {
        return Err(OptimError::BadParam(format!(
            "variance ratio needs at least 2 samples, got {n}"
        )));
    }
    let p = per_sample_grads[0].len();
    for g in per_sample_grads {
        if g.len() != p {
            return Err(OptimError::DimMismatch {
                got: g.len(),
                expect: p,
            });
        }
    }
    let mut out = Vec::with_capacity(p);
    for i in 0..p {
        let mean = per_sample_grads.iter().map(|g| g[i]).sum::<f64>() / n as f64;
        let var = per_sample_grads
            .iter()
            .map(|g| (g[i] - mean).powi(2))
            .sum::<f64>()
            / n as f64;
        out.push(if mean.abs() < 1e-12 {
            f64::INFINITY
        } else {
            var / (mean * mean)
        });
    }
    Ok(out)
}

/// A target expressible as a finite sum of sinusoids: frequencies `k`,
/// amplitudes `alpha_k`, and the sample count `n` the bound is taken over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandLimitedSpec {
    pub frequencies: Vec<f64>,
    pub amplitudes: Vec<f64>,
    pub n: usize,
}

impl BandLimitedSpec {
    pub fn validate(&self) -> Result<(), OptimError> {
        if self.frequencies.is_empty() || self.frequencies.len() != self.amplitudes.len() {
            return Err(OptimError::BadParam(
                "need equal, nonempty frequency and amplitude lists".into(),
            ));
        }
        if self.n == 0 {
            return Err(OptimError::BadParam("sample count must be >= 1".into()));
        }
        Ok(())
    }
}

/// Loss bound for a band-limited target: `sqrt(2 pi sum_k alpha_k^2 k^2 / N)`.
pub fn band_limited_bound(spec: &BandLimitedSpec) -> Result<f64, OptimError> {
    spec.validate()?;
    let s: f64 = spec
        .frequencies
        .iter()
        .zip(&spec.amplitudes)
        .map(|(k, a)| a * a * k * k)
        .sum();
    Ok((std::f64::consts::TAU * s / spec.n as f64).sqrt())
}
