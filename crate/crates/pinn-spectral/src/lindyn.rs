//! Error dynamics of the linearized network, mode by mode.
//!
//! In the kernel eigenbasis each error component obeys the damped oscillator
//! `e'' + 2 gamma e' + kappa' e = 0` (continuous momentum flow), the two-step
//! recurrence `e_{t+1} = e_t + alpha (e_t - e_{t-1}) - eta kappa e_t`
//! (discrete momentum updates), or the plain decay `e^{-kappa t}` (gradient
//! descent). This module evaluates the closed forms, simulates the discrete
//! and continuous dynamics, and writes trajectories to CSV.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinDynError {
    #[error("invalid input: {0}")]
    BadParam(String),
    #[error("csv error: {0}")]
    Csv(String),
}

/// Exact solution of `e'' + 2 gamma e' + kappa' e = 0` with `e(0) = e0`,
/// `e'(0) = v0`, evaluated at `t`.
///
/// All three regimes share the shape `e^{-gamma t} (e0 C(t) + (v0 + gamma e0) S(t))`
/// with `(C, S)` = `(cos wt, sin wt / w)`, `(1, t)`, or `(cosh wt, sinh wt / w)`;
/// the branch tie tolerance matches the mode classifier (1e-9 relative), and
/// far over-damped evaluation switches to the explicit-roots form to dodge
/// `cosh` overflow.
pub fn mode_closed_form(kappa_prime: f64, gamma: f64, e0: f64, v0: f64, t: f64) -> f64 {
    assert!(
        kappa_prime >= 0.0 && gamma >= 0.0,
        "mode_closed_form needs kappa' >= 0 and gamma >= 0"
    );
    let disc = gamma * gamma - kappa_prime;
    let tie = 1e-9 * (gamma * gamma).max(kappa_prime).max(f64::MIN_POSITIVE);
    let a = v0 + gamma * e0;
    if disc.abs() <= tie {
        (e0 + a * t) * (-gamma * t).exp()
    } else if disc < 0.0 {
        let w = (-disc).sqrt();
        let (s, c) = (w * t).sin_cos();
        (-gamma * t).exp() * (e0 * c + a * s / w)
    } else {
        let w = disc.sqrt();
        if w * t > 30.0 {
            // cosh/sinh would overflow long before the product decays.
            let l1 = -gamma + w;
            let l2 = -gamma - w;
            let c1 = (v0 - l2 * e0) / (l1 - l2);
            let c2 = e0 - c1;
            c1 * (l1 * t).exp() + c2 * (l2 * t).exp()
        } else {
            let x = w * t;
            (-gamma * t).exp() * (e0 * x.cosh() + a * x.sinh() / w)
        }
    }
}

/// Gradient-descent reference decay `e^{-kappa t}`.
pub fn sgd_decay_reference(kappa: f64, t: f64) -> f64 {
    assert!(kappa >= 0.0 && t >= 0.0, "sgd reference needs kappa, t >= 0");
    (-kappa * t).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    ClosedForm,
    DiscreteSgdm,
    OdeRk4,
    SgdReference,
}

impl std::fmt::Display for Generator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Generator::ClosedForm => "closed_form",
            Generator::DiscreteSgdm => "discrete_sgdm",
            Generator::OdeRk4 => "ode_rk4",
            Generator::SgdReference => "sgd_reference",
        })
    }
}

/// Per-mode error values over a time (or step) grid.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// Step index or continuous time, strictly increasing.
    pub times: Vec<f64>,
    /// `(times.len(), n_modes)`.
    pub values: Array2<f64>,
    pub generator: Generator,
    /// Set when any mode magnitude exceeded 1e12; the trajectory is
    /// truncated at the offending record.
    pub diverged: bool,
    /// Set when the RK4 local-error estimate exceeded 1e-6 anywhere.
    pub instability_flagged: bool,
}

const DIVERGENCE_LIMIT: f64 = 1e12;

/// Iterates the linearized momentum recurrence independently per mode
/// (`kappas` are kernel eigenvalues; `e0` the initial error coefficients in
/// the eigenbasis). Records step 0, every `record_every`-th step, and the
/// final step.
pub fn simulate_linear_sgdm(
    kappas: &[f64],
    e0: &[f64],
    alpha: f64,
    eta: f64,
    steps: usize,
    record_every: usize,
) -> Result<Trajectory, LinDynError> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(LinDynError::BadParam(format!(
            "alpha must lie in [0, 1), got {alpha}"
        )));
    }
    if !(eta.is_finite() && eta > 0.0) {
        return Err(LinDynError::BadParam(format!("eta must be positive, got {eta}")));
    }
    if kappas.len() != e0.len() || kappas.is_empty() {
        return Err(LinDynError::BadParam(
            "need matching, nonempty kappa and e0 vectors".into(),
        ));
    }
    let every = record_every.max(1);
    let n_modes = kappas.len();
    let mut prev = e0.to_vec();
    let mut cur = e0.to_vec();
    let mut times = vec![0.0];
    let mut rows: Vec<f64> = cur.clone();
    let mut diverged = false;

    for step in 1..=steps {
        let mut next = vec![0.0; n_modes];
        for i in 0..n_modes {
            next[i] = cur[i] + alpha * (cur[i] - prev[i]) - eta * kappas[i] * cur[i];
        }
        prev = std::mem::replace(&mut cur, next);
        let blown = cur.iter().any(|v| v.abs() > DIVERGENCE_LIMIT);
        if step % every == 0 || step == steps || blown {
            times.push(step as f64);
            rows.extend_from_slice(&cur);
        }
        if blown {
            diverged = true;
            break;
        }
    }
    let values = Array2::from_shape_vec((times.len(), n_modes), rows).unwrap();
    Ok(Trajectory {
        times,
        values,
        generator: Generator::DiscreteSgdm,
        diverged,
        instability_flagged: false,
    })
}

/// RK4 integration of one oscillator mode over `t_grid`, starting from
/// `(e0, v0)` at t = 0. Returns positions, velocities, and whether any
/// local-error estimate (step doubling) exceeded 1e-6.
pub fn gradient_flow_mode(
    gamma: f64,
    kappa_prime: f64,
    e0: f64,
    v0: f64,
    t_grid: &[f64],
) -> (Vec<f64>, Vec<f64>, bool) {
    let rhs = |e: f64, v: f64| (v, -2.0 * gamma * v - kappa_prime * e);
    let rk4 = |e: f64, v: f64, h: f64| {
        let (k1e, k1v) = rhs(e, v);
        let (k2e, k2v) = rhs(e + 0.5 * h * k1e, v + 0.5 * h * k1v);
        let (k3e, k3v) = rhs(e + 0.5 * h * k2e, v + 0.5 * h * k2v);
        let (k4e, k4v) = rhs(e + h * k3e, v + h * k3v);
        (
            e + h / 6.0 * (k1e + 2.0 * k2e + 2.0 * k3e + k4e),
            v + h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v),
        )
    };

    let mut es = Vec::with_capacity(t_grid.len());
    let mut vs = Vec::with_capacity(t_grid.len());
    let mut flagged = false;
    let (mut e, mut v) = (e0, v0);
    let mut t = 0.0;
    for &target in t_grid {
        while t < target {
            let h = (target - t).min(1e-3);
            // Step doubling: one full step vs two halves; Richardson gap
            // over 15 estimates the local error of the finer result.
            let (ef, vf) = rk4(e, v, h);
            let (eh, vh) = rk4(e, v, 0.5 * h);
            let (eh2, vh2) = rk4(eh, vh, 0.5 * h);
            let err = ((ef - eh2).abs().max((vf - vh2).abs())) / 15.0;
            if err > 1e-6 {
                flagged = true;
            }
            e = eh2;
            v = vh2;
            t += h;
        }
        es.push(e);
        vs.push(v);
    }
    (es, vs, flagged)
}

/// Integrates every mode of a spectrum through the continuous momentum flow
/// (`gamma = mu / 2m`, `kappa'_i = kappa_i / m`), starting at rest.
pub fn simulate_gradient_flow(
    kappas: &[f64],
    m: f64,
    mu: f64,
    e0: &[f64],
    t_grid: &[f64],
) -> Result<Trajectory, LinDynError> {
    if !(m.is_finite() && m > 0.0) {
        return Err(LinDynError::BadParam(format!("need m > 0, got {m}")));
    }
    if !(mu.is_finite() && mu >= 0.0) {
        return Err(LinDynError::BadParam(format!("need mu >= 0, got {mu}")));
    }
    if kappas.len() != e0.len() || kappas.is_empty() {
        return Err(LinDynError::BadParam(
            "need matching, nonempty kappa and e0 vectors".into(),
        ));
    }
    if t_grid.is_empty() || t_grid[0] < 0.0 || t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(LinDynError::BadParam(
            "time grid must be nonnegative and strictly increasing".into(),
        ));
    }
    let gamma = mu / (2.0 * m);
    let n_modes = kappas.len();
    let mut values = Array2::zeros((t_grid.len(), n_modes));
    let mut flagged = false;
    for (i, (&kappa, &e0i)) in kappas.iter().zip(e0).enumerate() {
        let (es, _vs, f) = gradient_flow_mode(gamma, kappa / m, e0i, 0.0, t_grid);
        flagged |= f;
        for (r, val) in es.into_iter().enumerate() {
            values[(r, i)] = val;
        }
    }
    Ok(Trajectory {
        times: t_grid.to_vec(),
        values,
        generator: Generator::OdeRk4,
        diverged: false,
        instability_flagged: flagged,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TrajectoryCsvRow {
    t_or_step: f64,
    mode_index: usize,
    error_value: f64,
    generator: String,
}

pub fn write_trajectory_csv(path: &Path, tr: &Trajectory) -> Result<(), LinDynError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| LinDynError::Csv(e.to_string()))?;
    let tag = tr.generator.to_string();
    for (r, &t) in tr.times.iter().enumerate() {
        for mode in 0..tr.values.ncols() {
            w.serialize(TrajectoryCsvRow {
                t_or_step: t,
                mode_index: mode,
                error_value: tr.values[(r, mode)],
                generator: tag.clone(),
            })
            .map_err(|e| LinDynError::Csv(e.to_string()))?;
        }
    }
    w.flush().map_err(|e| LinDynError::Csv(e.to_string()))?;
    Ok(())
}

/// Reads a trajectory CSV back into memory (inverse of
/// [`write_trajectory_csv`] for a single-generator file).
pub fn read_trajectory_csv(path: &Path) -> Result<Trajectory, LinDynError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| LinDynError::Csv(e.to_string()))?;
    let rows: Vec<TrajectoryCsvRow> = r
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| LinDynError::Csv(e.to_string()))?;
    if rows.is_empty() {
        return Err(LinDynError::Csv("empty trajectory file".into()));
    }
    let n_modes = rows.iter().map(|r| r.mode_index).max().unwrap() + 1;
    if rows.len() % n_modes != 0 {
        return Err(LinDynError::Csv("ragged trajectory file".into()));
    }
    let n_times = rows.len() / n_modes;
    let mut times = Vec::with_capacity(n_times);
    let mut values = Array2::zeros((n_times, n_modes));
    for (i, chunk) in rows.chunks(n_modes).enumerate() {
        times.push(chunk[0].t_or_step);
        for row in chunk {
            if row.t_or_step != chunk[0].t_or_step {
                return Err(LinDynError::Csv("interleaved time blocks".into()));
            }
            values[(i, row.mode_index)] = row.error_value;
        }
    }
    let generator = match rows[0].generator.as_str() {
        "closed_form" => Generator::ClosedForm,
        "discrete_sgdm" => Generator::DiscreteSgdm,
        "ode_rk4" => Generator::OdeRk4,
        "sgd_reference" => Generator::SgdReference,
        other => return Err(LinDynError::Csv(format!("unknown generator {other:?}"))),
    };
    Ok(Trajectory {
        times,
        values,
        generator,
        diverged: false,
        instability_flagged: false,
    })
}

/// First time at which `|e|` falls below `threshold * |e0|` and stays there
/// for the rest of the scanned grid; `None` if it never settles.
pub fn settling_time(
    f: impl Fn(f64) -> f64,
    e0: f64,
    threshold: f64,
    t_max: f64,
    dt: f64,
) -> Option<f64> {
    let n = (t_max / dt).ceil() as usize;
    let cut = threshold * e0.abs();
    let mut last_above: Option<usize> = None;
    for i in 0..=n {
        if f(i as f64 * dt).abs() >= cut {
            last_above = Some(i);
        }
    }
    match last_above {
        Some(i) if i == n => None,
        Some(i) => Some((i + 1) as f64 * dt),
        None => Some(0.0),
    }
}
