//! Reference solver for the reaction-diffusion benchmark.
//!
//! Strang splitting on a periodic Fourier grid: half a reaction step, a full
//! diffusion step, half a reaction step. Both substeps use exact flows — the
//! logistic ODE has a closed-form solution and diffusion is a diagonal decay
//! in Fourier space — so the only splitting error is the O(dt^2) commutator
//! term. Solutions are cached on disk as binary grids keyed by a hash of the
//! solver inputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gridfile::{self, GridFileError, MAGIC_RD_REFERENCE};
use crate::problems::{ProblemSpec, TWO_PI};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("invalid oracle parameter: {0}")]
    BadParam(String),
    #[error(transparent)]
    Grid(#[from] GridFileError),
    #[error("cached reference does not match the requested solve: {0}")]
    CacheMismatch(String),
}

/// Discretization of the reference solve. The defaults put grid nodes on
/// every evaluation point used by the error metrics (256 divides 512, 100
/// divides 10_000), so the metrics read the reference exactly at nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RdOracleConfig {
    pub grid_n: usize,
    pub dt: f64,
    pub t_end: f64,
}

impl Default for RdOracleConfig {
    fn default() -> Self {
        RdOracleConfig {
            grid_n: 512,
            dt: 1e-4,
            t_end: 1.0,
        }
    }
}

impl RdOracleConfig {
    fn validate(&self) -> Result<(), OracleError> {
        if self.grid_n < 4 {
            return Err(OracleError::BadParam("grid_n must be at least 4".into()));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(OracleError::BadParam("dt must be positive".into()));
        }
        if !(self.t_end.is_finite() && self.t_end > 0.0) {
            return Err(OracleError::BadParam("t_end must be positive".into()));
        }
        Ok(())
    }
}

/// Dense space-time reference grid: row `i` holds `u(., i * dt_eff)` on the
/// periodic nodes `x_j = 2 pi j / grid_n`.
#[derive(Debug, Clone)]
pub struct RdReference {
    pub nu: f64,
    pub rho: f64,
    pub grid_n: usize,
    /// Actual step used: `t_end / n_steps` with `n_steps = round(t_end/dt)`.
    pub dt_eff: f64,
    pub t_end: f64,
    pub data: Array2<f64>,
}

impl RdReference {
    pub fn n_steps(&self) -> usize {
        self.data.nrows() - 1
    }

    /// Bilinear interpolation, periodic in x, clamped to `[0, t_end]` in t.
    /// Exact (no interpolation error) when `(x, t)` sits on a grid node.
    pub fn evaluate(&self, x: f64, t: f64) -> f64 {
        let n = self.grid_n;
        let sx = x.rem_euclid(TWO_PI) / (TWO_PI / n as f64);
        let ix = (sx.floor() as usize).min(n - 1);
        let fx = sx - ix as f64;
        let ix1 = (ix + 1) % n;

        let st = (t / self.dt_eff).clamp(0.0, self.n_steps() as f64);
        let it = (st.floor() as usize).min(self.n_steps() - 1);
        let ft = st - it as f64;
        let it1 = it + 1;

        let d = &self.data;
        (1.0 - ft) * ((1.0 - fx) * d[(it, ix)] + fx * d[(it, ix1)])
            + ft * ((1.0 - fx) * d[(it1, ix)] + fx * d[(it1, ix1)])
    }
}

/// Exact logistic flow for `u' = rho u (1 - u)` over time `tau`.
fn logistic_step(u: f64, rho: f64, tau: f64) -> f64 {
    // u e^{rho tau} / (1 + u (e^{rho tau} - 1)); expm1 keeps small-tau accuracy.
    let em1 = (rho * tau).exp_m1();
    u * (em1 + 1.0) / (1.0 + u * em1)
}

/// Solves the periodic reaction-diffusion problem with the module's
/// split-step scheme. `nu` and `rho` may be zero here (each substep then
/// reduces to the identity), which the limit-case tests rely on; the
/// public problem constructors still require them positive.
pub fn rd_reference_solve(
    nu: f64,
    rho: f64,
    cfg: &RdOracleConfig,
) -> Result<RdReference, OracleError> {
    if !(nu.is_finite() && nu >= 0.0 && rho.is_finite() && rho >= 0.0) {
        return Err(OracleError::BadParam(format!(
            "need nu >= 0 and rho >= 0, got nu={nu}, rho={rho}"
        )));
    }
    cfg.validate()?;
    let n = cfg.grid_n;
    let n_steps = (cfg.t_end / cfg.dt).round().max(1.0) as usize;
    let dt_eff = cfg.t_end / n_steps as f64;

    let spec = ProblemSpec::ReactionDiffusion { nu, rho };
    let mut u: Vec<f64> = (0..n)
        .map(|j| spec.initial(TWO_PI * j as f64 / n as f64))
        .collect();

    // e^{-nu k^2 dt} per FFT bin, with the usual wrapped wavenumbers.
    let decay: Vec<f64> = (0..n)
        .map(|j| {
            let k = if j <= n / 2 { j as f64 } else { j as f64 - n as f64 };
            (-nu * k * k * dt_eff).exp()
        })
        .collect();

    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut buf: Vec<Complex<f64>> = vec![Complex::default(); n];

    let mut data = Array2::zeros((n_steps + 1, n));
    data.row_mut(0)
        .into_iter()
        .zip(&u)
        .for_each(|(slot, &v)| *slot = v);

    let half = dt_eff / 2.0;
    for step in 1..=n_steps {
        for v in u.iter_mut() {
            *v = logistic_step(*v, rho, half);
        }
        for (b, &v) in buf.iter_mut().zip(&u) {
            *b = Complex::new(v, 0.0);
        }
        fwd.process(&mut buf);
        for (b, &d) in buf.iter_mut().zip(&decay) {
            *b *= d;
        }
        inv.process(&mut buf);
        let scale = 1.0 / n as f64;
        for (v, b) in u.iter_mut().zip(&buf) {
            *v = b.re * scale;
        }
        for v in u.iter_mut() {
            *v = logistic_step(*v, rho, half);
        }
        data.row_mut(step)
            .into_iter()
            .zip(&u)
            .for_each(|(slot, &v)| *slot = v);
    }

    Ok(RdReference {
        nu,
        rho,
        grid_n: n,
        dt_eff,
        t_end: cfg.t_end,
        data,
    })
}

/// Cache file name: `rdref_` + first 16 hex chars of a hash over the solver
/// inputs at full precision.
pub fn cache_path(dir: &Path, nu: f64, rho: f64, cfg: &RdOracleConfig) -> PathBuf {
    let mut h = Sha256::new();
    h.update(b"rd-reference-v1");
    for v in [nu, rho, cfg.dt, cfg.t_end] {
        h.update(v.to_le_bytes());
    }
    h.update((cfg.grid_n as u64).to_le_bytes());
    let digest = h.finalize();
    let hex: String = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
    dir.join(format!("rdref_{hex}.bin"))
}

/// Loads a cached reference if present (verifying it against the request),
/// otherwise solves and persists. A corrupt or mismatched cache file is an
/// error rather than a silent recompute, so damage is visible.
pub fn load_or_solve(
    dir: &Path,
    nu: f64,
    rho: f64,
    cfg: &RdOracleConfig,
) -> Result<RdReference, OracleError> {
    let path = cache_path(dir, nu, rho, cfg);
    if path.exists() {
        let gf = gridfile::read_grid(&path, MAGIC_RD_REFERENCE)?;
        let meta = &gf.meta;
        let n_steps = gf.data.nrows() - 1;
        let grid_n_ok = meta.extra.get("grid_n").and_then(|v| v.as_u64())
            == Some(cfg.grid_n as u64);
        if meta.nu != nu
            || meta.rho != rho
            || meta.t_end != cfg.t_end
            || meta.cols != cfg.grid_n
            || !grid_n_ok
        {
            return Err(OracleError::CacheMismatch(format!(
                "{} holds nu={}, rho={}, t_end={}, cols={}",
                path.display(),
                meta.nu,
                meta.rho,
                meta.t_end,
                meta.cols
            )));
        }
        return Ok(RdReference {
            nu,
            rho,
            grid_n: cfg.grid_n,
            dt_eff: cfg.t_end / n_steps as f64,
            t_end: cfg.t_end,
            data: gf.data,
        });
    }
    let r = rd_reference_solve(nu, rho, cfg)?;
    std::fs::create_dir_all(dir).map_err(GridFileError::Io)?;
    let mut extra = BTreeMap::new();
    extra.insert("grid_n".to_string(), serde_json::json!(cfg.grid_n));
    extra.insert("n_steps".to_string(), serde_json::json!(r.n_steps()));
    extra.insert("scheme".to_string(), serde_json::json!("strang-spectral"));
    gridfile::write_grid(
        &path,
        MAGIC_RD_REFERENCE,
        nu,
        rho,
        r.dt_eff,
        cfg.t_end,
        &r.data,
        extra,
    )?;
    Ok(r)
}
