//! Experiment orchestration: run configs, the training loop, error metrics,
//! sweeps, scans, and comparison tables.
//!
//! A run is described by one JSON [`ExperimentConfig`]. Training writes a
//! self-contained run directory — `config.json`, `records.csv`,
//! `manifest.json`, weight snapshots, and per-epoch kernel diagnostics — so
//! every figure-ready CSV can be traced back to the exact configuration
//! (and content hash) that produced it.

pub mod scan;
pub mod train;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gridfile::{self, GridFileError, MAGIC_WEIGHTS};
use crate::net::{MlpConfig, NetError, Parameterization};
use crate::ntk::NtkError;
use crate::optim::{OptimError, OptimizerConfig};
use crate::problems::oracle::RdOracleConfig;
use crate::problems::{Problem, ProblemError, ProblemSpec, SamplingScheme};

pub use scan::{
    compare_table, fit_loglog_slope, hessian_scan, reference_errors, render_compare_table,
    width_sweep, CompareRow, HessianProbe, HessianScanPoint, MeasurementPoint, WidthSweepRow,
};
pub use train::{
    damping_parameters, read_diagnostics_csv, run_training, DiagnosticRow, RunManifest,
    RunOutcome,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Ntk(#[from] NtkError),
    #[error(transparent)]
    Grid(#[from] GridFileError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("length mismatch: got {got}, expected {expect}")]
    LengthMismatch { got: usize, expect: usize },
    #[error("exact solution has zero norm on the evaluation grid")]
    ZeroNorm,
}

/// Network shape: `depth` hidden layers of `width` units each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub depth: usize,
    pub width: usize,
    #[serde(default)]
    pub parameterization: Parameterization,
}

impl NetworkConfig {
    pub fn mlp_config(&self, input_dim: usize) -> MlpConfig {
        let mut cfg = MlpConfig::new(input_dim, vec![self.width; self.depth]);
        cfg.parameterization = self.parameterization;
        cfg
    }
}

/// Optional minibatching: each step visits `batch_r` collocation points (and
/// a proportional boundary slice, cycling so no batch loses its boundary
/// term); one epoch is one full shuffled pass over the collocation set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinibatchConfig {
    pub batch_r: usize,
}

/// One training run, in full. Serialized as the run's `config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    pub network: NetworkConfig,
    pub optimizer: OptimizerConfig,
    pub n_b: usize,
    pub n_r: usize,
    #[serde(default)]
    pub sampling: SamplingScheme,
    pub seed: u64,
    pub epochs: u64,
    /// Epochs (0 = before training) at which to snapshot weights, assemble
    /// the tangent kernel on the fixed probe subset, and log spectra /
    /// gradient-condition checks / residual-mode projections.
    #[serde(default)]
    pub diagnostic_epochs: Vec<u64>,
    /// Extra linearly spaced record epochs on top of the logarithmic
    /// schedule (e.g. 500 = record every 500 epochs).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_stride: Option<u64>,
    /// Stop once the evaluation-grid relative error drops to this value
    /// (checked at record epochs only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_at_rel_err: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub minibatch: Option<MinibatchConfig>,
    /// Where to write run artifacts; in-memory only when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        self.problem
            .validate()
            .map_err(|e| HarnessError::BadConfig(e.to_string()))?;
        if self.network.depth == 0 || self.network.width == 0 {
            return Err(HarnessError::BadConfig(
                "network needs at least one hidden layer of nonzero width".into(),
            ));
        }
        if self.epochs < 1 {
            return Err(HarnessError::BadConfig("epochs must be at least 1".into()));
        }
        if self.n_b == 0 || self.n_r == 0 {
            return Err(HarnessError::BadConfig(
                "need nonzero boundary and collocation point counts".into(),
            ));
        }
        if let Some(&bad) = self.diagnostic_epochs.iter().find(|&&d| d > self.epochs) {
            return Err(HarnessError::BadConfig(format!(
                "diagnostic epoch {bad} exceeds the epoch budget {}",
                self.epochs
            )));
        }
        if let Some(mb) = &self.minibatch {
            if mb.batch_r == 0 {
                return Err(HarnessError::BadConfig("batch_r must be nonzero".into()));
            }
        }
        if let Some(r) = self.stop_at_rel_err {
            if !(r.is_finite() && r > 0.0) {
                return Err(HarnessError::BadConfig(format!(
                    "stop_at_rel_err must be positive, got {r}"
                )));
            }
        }
        if let Some(s) = self.record_stride {
            if s == 0 {
                return Err(HarnessError::BadConfig("record_stride must be nonzero".into()));
            }
        }
        Ok(())
    }

    /// Content hash identifying this exact configuration (used for cache
    /// directories and the run manifest). The output location is excluded:
    /// two runs differing only in where they write are the same experiment.
    pub fn content_hash(&self) -> String {
        let mut semantic = self.clone();
        semantic.output_dir = None;
        let bytes = serde_json::to_vec(&semantic).expect("config serializes");
        let digest = Sha256::digest(&bytes);
        let mut s = String::with_capacity(64);
        for b in digest {
            s.push_str(&format!("{b:02x}"));
        }
        s
    }
}

/// Problem-size presets: `Paper` keeps the config as written; `Desk` caps the
/// width at 128 and divides the epoch budget by 5 for single-core iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scale {
    Desk,
    Paper,
}

impl std::str::FromStr for Scale {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "desk" => Ok(Scale::Desk),
            "paper" => Ok(Scale::Paper),
            other => Err(format!("unknown scale {other:?} (expected desk|paper)")),
        }
    }
}

pub fn apply_scale(config: &mut ExperimentConfig, scale: Scale) {
    if scale == Scale::Desk {
        config.network.width = config.network.width.min(128);
        config.epochs = (config.epochs / 5).max(1);
        config.diagnostic_epochs = config
            .diagnostic_epochs
            .iter()
            .map(|&d| d.min(config.epochs))
            .collect();
        config.diagnostic_epochs.dedup();
    }
}

/// Cache directory for oracle references and comparison-table runs:
/// `PINN_SPECTRA_CACHE` when set, a temp-dir default otherwise.
pub fn cache_dir() -> PathBuf {
    match std::env::var_os("PINN_SPECTRA_CACHE") {
        Some(dir) => PathBuf::from(dir),
        None => std::env::temp_dir().join("pinn-spectra-cache"),
    }
}

/// Builds the problem (solving or loading the reaction-diffusion reference
/// when needed) with caching under [`cache_dir`].
pub fn build_problem(spec: ProblemSpec) -> Result<Problem, HarnessError> {
    let dir = cache_dir();
    std::fs::create_dir_all(&dir)?;
    Ok(crate::problems::make_problem(
        spec,
        &RdOracleConfig::default(),
        Some(&dir),
    )?)
}

// ---------------------------------------------------------------------------
// Error metrics and evaluation grids
// ---------------------------------------------------------------------------

/// Relative and absolute solution errors on a grid:
/// `rel = ||u_hat - u||_2 / ||u||_2`, `abs = ||u_hat - u||_2 / sqrt(n)`.
pub fn relative_error(u_hat: &[f64], u_exact: &[f64]) -> Result<(f64, f64), HarnessError> {
    if u_hat.len() != u_exact.len() {
        return Err(HarnessError::LengthMismatch {
            got: u_hat.len(),
            expect: u_exact.len(),
        });
    }
    if u_exact.is_empty() {
        return Err(HarnessError::ZeroNorm);
    }
    let mut diff2 = 0.0;
    let mut exact2 = 0.0;
    for (a, b) in u_hat.iter().zip(u_exact) {
        diff2 += (a - b) * (a - b);
        exact2 += b * b;
    }
    if exact2 <= 0.0 {
        return Err(HarnessError::ZeroNorm);
    }
    let diff = diff2.sqrt();
    Ok((diff / exact2.sqrt(), diff / (u_hat.len() as f64).sqrt()))
}

/// The fixed evaluation grid for a problem: 1000 points spanning [0, 1]
/// inclusive for the stationary problem; a 256 x 100 space-time lattice
/// (x_i = 2 pi i/256, t_j = j/100) for the time-dependent ones.
pub fn evaluation_grid(spec: &ProblemSpec) -> Array2<f64> {
    match spec.input_dim() {
        1 => {
            let n = 1000;
            let mut g = Array2::zeros((n, 1));
            for i in 0..n {
                g[(i, 0)] = i as f64 / (n - 1) as f64;
            }
            g
        }
        _ => {
            let (nx, nt) = (256, 100);
            let mut g = Array2::zeros((nx * nt, 2));
            for i in 0..nx {
                let x = std::f64::consts::TAU * i as f64 / nx as f64;
                for j in 1..=nt {
                    let r = i * nt + (j - 1);
                    g[(r, 0)] = x;
                    g[(r, 1)] = j as f64 / nt as f64;
                }
            }
            g
        }
    }
}

/// Exact (or reference) solution values over a grid of points.
pub fn exact_on_grid(problem: &Problem, grid: &Array2<f64>) -> Result<Vec<f64>, HarnessError> {
    let mut out = Vec::with_capacity(grid.nrows());
    for row in grid.rows() {
        out.push(problem.exact(row.as_slice().expect("contiguous grid row"))?);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Train records
// ---------------------------------------------------------------------------

/// One row of `records.csv`. `wall_ms` is cumulative and the only
/// nondeterministic column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub epoch: u64,
    pub loss: f64,
    pub loss_b: f64,
    pub loss_r: f64,
    pub rel_err: f64,
    pub abs_err: f64,
    pub wall_ms: f64,
}

pub fn write_records_csv(path: &Path, records: &[TrainRecord]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| HarnessError::Csv(e.to_string()))?;
    for r in records {
        w.serialize(r).map_err(|e| HarnessError::Csv(e.to_string()))?;
    }
    w.flush().map_err(|e| HarnessError::Csv(e.to_string()))?;
    Ok(())
}

pub fn read_records_csv(path: &Path) -> Result<Vec<TrainRecord>, HarnessError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| HarnessError::Csv(e.to_string()))?;
    r.deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| HarnessError::Csv(e.to_string()))
}

// ---------------------------------------------------------------------------
// Weight persistence
// ---------------------------------------------------------------------------

pub fn save_weights(
    path: &Path,
    flat: &[f64],
    epoch: Option<u64>,
) -> Result<(), HarnessError> {
    let data = Array2::from_shape_vec((1, flat.len()), flat.to_vec())
        .expect("row vector always reshapes");
    let mut extra = BTreeMap::new();
    extra.insert(
        "param_count".to_string(),
        serde_json::Value::from(flat.len()),
    );
    if let Some(e) = epoch {
        extra.insert("epoch".to_string(), serde_json::Value::from(e));
    }
    gridfile::write_grid(path, MAGIC_WEIGHTS, 0.0, 0.0, 0.0, 0.0, &data, extra)?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<Vec<f64>, HarnessError> {
    let gf = gridfile::read_grid(path, MAGIC_WEIGHTS)?;
    if gf.data.nrows() != 1 {
        return Err(HarnessError::Grid(GridFileError::Corrupt(format!(
            "weight file holds {} rows, expected 1",
            gf.data.nrows()
        ))));
    }
    Ok(gf.data.row(0).to_vec())
}
