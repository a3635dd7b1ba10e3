//! Tangent-kernel assembly and spectral diagnostics.
//!
//! The kernel is the Gram matrix `K = J J^T` of per-term gradient rows: one
//! row per boundary term (the gradient of `u` at the point, or of
//! `u(a) - u(b)` for a periodic pair) followed by one row per collocation
//! point (the gradient of the PDE residual there). Blocks `K_bb`, `K_br`,
//! `K_rr` fall out of that ordering. On top of the kernel sit the spectrum,
//! the damped-oscillator mode classification, the drift (staticity) measure,
//! the gradient-domination ratio, and per-mode residual projections.

mod jacobi;

pub use jacobi::{jacobi_eigen, JacobiResult};

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gridfile::{self, GridFileError, MAGIC_KERNEL};
use crate::net::{
    backward_rows, forward_batch, JetTape, MlpConfig, MlpParams, Observable, SeedBatch,
};
use crate::problems::{
    BTerm, LossContext, PointLayout, PointSet, ProblemError, ProblemSpec, ResidualObservable,
    SamplingScheme,
};

/// Default ceiling on total kernel points; (N_b+N_r)^2 doubles beyond this
/// stop fitting comfortably in memory/time on one core.
pub const DEFAULT_KERNEL_POINT_CAP: usize = 4000;

#[derive(Debug, Error)]
pub enum NtkError {
    #[error("kernel would need {total} points; cap is {cap}")]
    PointCapExceeded { total: usize, cap: usize },
    #[error("kernel is not positive semi-definite: min eigenvalue {min}, max {max}")]
    NotPsd { min: f64, max: f64 },
    #[error("eigen-solver did not converge within {sweeps} sweeps")]
    EigenNonConvergence { sweeps: usize },
    #[error("kernels were assembled over different point sets")]
    PointSetMismatch,
    #[error("vector length {got} does not match kernel size {expect}")]
    LengthMismatch { got: usize, expect: usize },
    #[error("invalid input: {0}")]
    BadParam(String),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Grid(#[from] GridFileError),
    #[error("csv error: {0}")]
    Csv(String),
}

/// Identifies what a kernel was computed from, so drift comparisons can
/// refuse apples-to-oranges inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelMeta {
    pub problem: ProblemSpec,
    pub params_hash: String,
    pub points_hash: String,
    pub seed: u64,
    pub epoch: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct KernelMatrix {
    /// Full symmetric `(n_b + n_r)^2` kernel.
    pub k: Array2<f64>,
    pub n_b: usize,
    pub n_r: usize,
    pub meta: KernelMeta,
}

impl KernelMatrix {
    pub fn size(&self) -> usize {
        self.n_b + self.n_r
    }

    pub fn k_bb(&self) -> ArrayView2<'_, f64> {
        self.k.slice(ndarray::s![..self.n_b, ..self.n_b])
    }

    pub fn k_br(&self) -> ArrayView2<'_, f64> {
        self.k.slice(ndarray::s![..self.n_b, self.n_b..])
    }

    pub fn k_rb(&self) -> ArrayView2<'_, f64> {
        self.k.slice(ndarray::s![self.n_b.., ..self.n_b])
    }

    pub fn k_rr(&self) -> ArrayView2<'_, f64> {
        self.k.slice(ndarray::s![self.n_b.., self.n_b..])
    }
}

fn hash_params(params: &MlpParams) -> String {
    let mut h = Sha256::new();
    for v in params.flatten() {
        h.update(v.to_le_bytes());
    }
    short_hex(&h.finalize())
}

fn hash_points(points: &PointSet) -> String {
    let mut h = Sha256::new();
    for bp in &points.boundary {
        match bp {
            crate::problems::BoundaryPoint::Dirichlet { x, target } => {
                h.update([0u8]);
                for v in x {
                    h.update(v.to_le_bytes());
                }
                h.update(target.to_le_bytes());
            }
            crate::problems::BoundaryPoint::PeriodicPair { a, b } => {
                h.update([1u8]);
                for v in a.iter().chain(b) {
                    h.update(v.to_le_bytes());
                }
            }
        }
    }
    for v in points.collocation.iter() {
        h.update(v.to_le_bytes());
    }
    short_hex(&h.finalize())
}

fn short_hex(digest: &[u8]) -> String {
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// The fixed diagnostic point set kernels are evaluated on: small enough to
/// eigendecompose quickly, held constant (same seed) across epochs so drift
/// and projections compare like with like.
pub fn diagnostic_points(spec: &ProblemSpec, seed: u64) -> Result<PointSet, ProblemError> {
    crate::problems::sample_points(spec, 128, 256, SamplingScheme::UniformRandom, seed)
}

/// Assembles the tangent kernel at the default point cap.
pub fn assemble_kernel(
    cfg: &MlpConfig,
    params: &MlpParams,
    spec: &ProblemSpec,
    points: &PointSet,
) -> Result<KernelMatrix, NtkError> {
    assemble_kernel_capped(cfg, params, spec, points, DEFAULT_KERNEL_POINT_CAP)
}

/// Assembles `K = J J^T` over the given point set, with an explicit cap on
/// the total number of rows.
pub fn assemble_kernel_capped(
    cfg: &MlpConfig,
    params: &MlpParams,
    spec: &ProblemSpec,
    points: &PointSet,
    cap: usize,
) -> Result<KernelMatrix, NtkError> {
    let n_b = points.n_boundary();
    let n_r = points.n_collocation();
    let total = n_b + n_r;
    if total > cap {
        return Err(NtkError::PointCapExceeded { total, cap });
    }
    let layout = PointLayout::new(spec, points)?;
    let n_pts = layout.n_unique();
    let d = spec.input_dim();
    let p_total = cfg.param_count();
    let order = spec.residual_order();

    let mut tape = JetTape::new();
    let out = forward_batch(cfg, params, layout.xs.view(), order, &mut tape);

    // Value rows for every point a boundary term touches.
    let mut seeds = SeedBatch::zeros(n_pts, d, order);
    for term in &layout.bterms {
        match *term {
            BTerm::Value { pt, .. } => seeds.value[pt] = 1.0,
            BTerm::Pair { a, b } => {
                seeds.value[a] = 1.0;
                seeds.value[b] = 1.0;
            }
        }
    }
    let rows_u = backward_rows(cfg, params, &mut tape, &seeds);

    // Residual-operator rows at the collocation points.
    let obs = ResidualObservable(spec);
    let mut seeds = SeedBatch::zeros(n_pts, d, order);
    for &pt in &layout.colloc_pt {
        let jet = out.jet(pt);
        let x = layout.xs.row(pt);
        let s = obs.seeds(&jet, x.as_slice().unwrap());
        seeds.value[pt] = s.value;
        for j in 0..d {
            seeds.d1[(pt, j)] = s.d1[j];
            seeds.d2[(pt, j)] = s.d2[j];
        }
    }
    let rows_r = backward_rows(cfg, params, &mut tape, &seeds);

    let mut jac = Array2::zeros((total, p_total));
    for (row, term) in layout.bterms.iter().enumerate() {
        match *term {
            BTerm::Value { pt, .. } => jac.row_mut(row).assign(&rows_u.row(pt)),
            BTerm::Pair { a, b } => {
                let diff = &rows_u.row(a) - &rows_u.row(b);
                jac.row_mut(row).assign(&diff);
            }
        }
    }
    for (i, &pt) in layout.colloc_pt.iter().enumerate() {
        jac.row_mut(n_b + i).assign(&rows_r.row(pt));
    }

    let mut k = Array2::zeros((total, total));
    general_mat_mul(1.0, &jac, &jac.t(), 0.0, &mut k);
    // Exact symmetry for the eigensolver; GEMM round-off is ~1e-16 relative.
    for i in 0..total {
        for j in (i + 1)..total {
            let avg = 0.5 * (k[(i, j)] + k[(j, i)]);
            k[(i, j)] = avg;
            k[(j, i)] = avg;
        }
    }

    Ok(KernelMatrix {
        k,
        n_b,
        n_r,
        meta: KernelMeta {
            problem: *spec,
            params_hash: hash_params(params),
            points_hash: hash_points(points),
            seed: points.seed,
            epoch: None,
        },
    })
}

/// Eigendecomposition of a kernel: descending eigenvalues with matching
/// orthonormal eigenvector columns. Negative round-off eigenvalues are
/// clamped to zero after the PSD check; the pre-clamp minimum is kept so
/// callers can log how much was clamped.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    /// Columns are eigenvectors, ordered like `eigenvalues`.
    pub vectors: Array2<f64>,
    pub pre_clamp_min: f64,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn lambda_max(&self) -> f64 {
        self.eigenvalues.first().copied().unwrap_or(0.0)
    }

    pub fn lambda_min(&self) -> f64 {
        self.eigenvalues.last().copied().unwrap_or(0.0)
    }
}

pub fn eigendecompose(kernel: &KernelMatrix) -> Result<Spectrum, NtkError> {
    let r = jacobi_eigen(&kernel.k, 50);
    if !r.converged {
        return Err(NtkError::EigenNonConvergence { sweeps: r.sweeps });
    }
    let max = r.eigenvalues.first().copied().unwrap_or(0.0).max(0.0);
    let pre_clamp_min = r.eigenvalues.last().copied().unwrap_or(0.0);
    if pre_clamp_min < -1e-8 * max {
        return Err(NtkError::NotPsd {
            min: pre_clamp_min,
            max,
        });
    }
    let eigenvalues = r.eigenvalues.iter().map(|&v| v.max(0.0)).collect();
    Ok(Spectrum {
        eigenvalues,
        vectors: r.vectors,
        pre_clamp_min,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Under,
    Critical,
    Over,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Regime::Under => "under",
            Regime::Critical => "critical",
            Regime::Over => "over",
        })
    }
}

impl std::str::FromStr for Regime {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "under" => Ok(Regime::Under),
            "critical" => Ok(Regime::Critical),
            "over" => Ok(Regime::Over),
            other => Err(format!("unknown regime {other:?}")),
        }
    }
}

/// One kernel mode viewed as the damped oscillator
/// `e'' + 2 gamma e' + kappa' e = 0`; roots are `-gamma +- sqrt(gamma^2 - kappa')`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeDamping {
    pub kappa: f64,
    pub kappa_prime: f64,
    pub regime: Regime,
    /// (re, im) of the two characteristic roots.
    pub root1: (f64, f64),
    pub root2: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DampingReport {
    pub gamma: f64,
    pub m: f64,
    pub mu: f64,
    pub modes: Vec<ModeDamping>,
}

/// Classifies raw eigenvalues. `gamma = mu / (2m)`, `kappa' = kappa / m`;
/// the critical tie uses a relative tolerance of 1e-9 on `gamma^2 - kappa'`.
pub fn classify_kappas(kappas: &[f64], m: f64, mu: f64) -> Result<DampingReport, NtkError> {
    if !(m.is_finite() && m > 0.0) {
        return Err(NtkError::BadParam(format!("need m > 0, got {m}")));
    }
    if !(mu.is_finite() && mu >= 0.0) {
        return Err(NtkError::BadParam(format!("need mu >= 0, got {mu}")));
    }
    let gamma = mu / (2.0 * m);
    let g2 = gamma * gamma;
    let modes = kappas
        .iter()
        .map(|&kappa| {
            let kp = kappa / m;
            let disc = g2 - kp;
            let tie = 1e-9 * g2.max(kp).max(f64::MIN_POSITIVE);
            let (regime, root1, root2) = if disc.abs() <= tie {
                (Regime::Critical, (-gamma, 0.0), (-gamma, 0.0))
            } else if disc < 0.0 {
                let w = (-disc).sqrt();
                (Regime::Under, (-gamma, w), (-gamma, -w))
            } else {
                let w = disc.sqrt();
                (Regime::Over, (-gamma + w, 0.0), (-gamma - w, 0.0))
            };
            ModeDamping {
                kappa,
                kappa_prime: kp,
                regime,
                root1,
                root2,
            }
        })
        .collect();
    Ok(DampingReport {
        gamma,
        m,
        mu,
        modes,
    })
}

pub fn classify_modes(spectrum: &Spectrum, m: f64, mu: f64) -> Result<DampingReport, NtkError> {
    classify_kappas(&spectrum.eigenvalues, m, mu)
}

/// Relative Frobenius drift `||K_now - K_ref||_F / ||K_ref||_F`. Refuses
/// kernels that were not assembled over the identical point set.
pub fn kernel_drift(k_ref: &KernelMatrix, k_now: &KernelMatrix) -> Result<f64, NtkError> {
    if k_ref.meta.points_hash != k_now.meta.points_hash
        || k_ref.k.dim() != k_now.k.dim()
        || k_ref.n_b != k_now.n_b
    {
        return Err(NtkError::PointSetMismatch);
    }
    let num = (&k_now.k - &k_ref.k).iter().map(|v| v * v).sum::<f64>().sqrt();
    let den = k_ref.k.iter().map(|v| v * v).sum::<f64>().sqrt();
    if den == 0.0 {
        return Err(NtkError::BadParam("reference kernel is zero".into()));
    }
    Ok(num / den)
}

/// Gradient-domination diagnostic at one training state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlStarDiagnostic {
    /// `||grad L||^2 / L`; `+inf` when the loss is exactly zero.
    pub ratio: f64,
    /// Smallest (clamped) eigenvalue of the kernel at the same state.
    pub lambda_min: f64,
    pub epoch: u64,
}

/// The bare ratio `||g||^2 / L` with the zero-loss sentinel.
pub fn pl_ratio_from(loss: f64, grad: &[f64]) -> f64 {
    if loss == 0.0 {
        return f64::INFINITY;
    }
    grad.iter().map(|g| g * g).sum::<f64>() / loss
}

pub fn pl_star_ratio(
    cfg: &MlpConfig,
    params: &MlpParams,
    spec: &ProblemSpec,
    points: &PointSet,
    epoch: u64,
) -> Result<PlStarDiagnostic, NtkError> {
    let mut ctx = LossContext::new(cfg, spec, points)?;
    let mut grad = vec![0.0; cfg.param_count()];
    let lb = ctx.loss_and_grad(params, &mut grad)?;
    let kernel = assemble_kernel(cfg, params, spec, points)?;
    let spectrum = eigendecompose(&kernel)?;
    Ok(PlStarDiagnostic {
        ratio: pl_ratio_from(lb.total, &grad),
        lambda_min: spectrum.lambda_min(),
        epoch,
    })
}

/// Coefficients of a per-term residual vector in the kernel eigenbasis:
/// `c_i = <e_i, r>`. Orthonormality makes this an isometry (Parseval).
pub fn residual_projection(spectrum: &Spectrum, residuals: &[f64]) -> Result<Vec<f64>, NtkError> {
    let n = spectrum.vectors.nrows();
    if residuals.len() != n {
        return Err(NtkError::LengthMismatch {
            got: residuals.len(),
            expect: n,
        });
    }
    let r = ndarray::ArrayView1::from(residuals);
    Ok(spectrum
        .vectors
        .axis_iter(Axis(1))
        .map(|col| col.dot(&r))
        .collect())
}

/// Index of the strongest discrete-Fourier bin of a sampled vector (bins
/// `0..=n/2`); used to eyeball the frequency content of kernel eigenvectors
/// on the collocation block.
pub fn dominant_frequency(values: &[f64]) -> usize {
    use rustfft::{num_complex::Complex, FftPlanner};
    let n = values.len();
    if n < 2 {
        return 0;
    }
    let mut buf: Vec<Complex<f64>> = values.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let mut best = (0usize, 0.0f64);
    for (i, c) in buf.iter().enumerate().take(n / 2 + 1) {
        let mag = c.norm_sqr();
        if mag > best.1 {
            best = (i, mag);
        }
    }
    best.0
}

/// One row of the exported spectrum CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumCsvRow {
    pub mode_index: usize,
    pub kappa: f64,
    pub kappa_prime: f64,
    pub regime: String,
    pub root1_re: f64,
    pub root1_im: f64,
    pub root2_re: f64,
    pub root2_im: f64,
}

pub fn write_spectrum_csv(path: &Path, report: &DampingReport) -> Result<(), NtkError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| NtkError::Csv(e.to_string()))?;
    for (i, m) in report.modes.iter().enumerate() {
        w.serialize(SpectrumCsvRow {
            mode_index: i,
            kappa: m.kappa,
            kappa_prime: m.kappa_prime,
            regime: m.regime.to_string(),
            root1_re: m.root1.0,
            root1_im: m.root1.1,
            root2_re: m.root2.0,
            root2_im: m.root2.1,
        })
        .map_err(|e| NtkError::Csv(e.to_string()))?;
    }
    w.flush().map_err(|e| NtkError::Csv(e.to_string()))?;
    Ok(())
}

pub fn read_spectrum_csv(path: &Path) -> Result<Vec<SpectrumCsvRow>, NtkError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| NtkError::Csv(e.to_string()))?;
    r.deserialize()
        .collect::<Result<Vec<SpectrumCsvRow>, _>>()
        .map_err(|e| NtkError::Csv(e.to_string()))
}

/// Persists a kernel in the binary grid container (magic `NTKM01`), with all
/// identifying metadata in the JSON sidecar.
pub fn dump_kernel(path: &Path, kernel: &KernelMatrix) -> Result<(), NtkError> {
    let mut extra = BTreeMap::new();
    extra.insert("n_b".into(), serde_json::json!(kernel.n_b));
    extra.insert("n_r".into(), serde_json::json!(kernel.n_r));
    extra.insert(
        "problem".into(),
        serde_json::to_value(kernel.meta.problem).unwrap(),
    );
    extra.insert(
        "params_hash".into(),
        serde_json::json!(kernel.meta.params_hash),
    );
    extra.insert(
        "points_hash".into(),
        serde_json::json!(kernel.meta.points_hash),
    );
    extra.insert("seed".into(), serde_json::json!(kernel.meta.seed));
    extra.insert("epoch".into(), serde_json::json!(kernel.meta.epoch));
    gridfile::write_grid(path, MAGIC_KERNEL, 0.0, 0.0, 0.0, 0.0, &kernel.k, extra)?;
    Ok(())
}

pub fn load_kernel(path: &Path) -> Result<KernelMatrix, NtkError> {
    let gf = gridfile::read_grid(path, MAGIC_KERNEL)?;
    let get = |key: &str| {
        gf.meta
            .extra
            .get(key)
            .cloned()
            .ok_or_else(|| NtkError::Csv(format!("kernel sidecar missing {key:?}")))
    };
    let n_b: usize = serde_json::from_value(get("n_b")?)
        .map_err(|e| NtkError::Csv(e.to_string()))?;
    let n_r: usize = serde_json::from_value(get("n_r")?)
        .map_err(|e| NtkError::Csv(e.to_string()))?;
    let problem: ProblemSpec = serde_json::from_value(get("problem")?)
        .map_err(|e| NtkError::Csv(e.to_string()))?;
    let params_hash: String = serde_json::from_value(get("params_hash")?)
        .map_err(|e| NtkError::Csv(e.to_string()))?;
    let points_hash: String = serde_json::from_value(get("points_hash")?)
        .map_err(|e| NtkError::Csv(e.to_string()))?;
    let seed: u64 =
        serde_json::from_value(get("seed")?).map_err(|e| NtkError::Csv(e.to_string()))?;
    let epoch: Option<u64> =
        serde_json::from_value(get("epoch")?).map_err(|e| NtkError::Csv(e.to_string()))?;
    if gf.data.nrows() != n_b + n_r || gf.data.ncols() != n_b + n_r {
        return Err(NtkError::Csv("kernel payload shape mismatch".into()));
    }
    Ok(KernelMatrix {
        k: gf.data,
        n_b,
        n_r,
        meta: KernelMeta {
            problem,
            params_hash,
            points_hash,
            seed,
            epoch,
        },
    })
}
