//! Multi-run studies: width sweeps, curvature-vs-stiffness scans, and cached
//! comparison tables.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::net::{
    backward_accumulate, forward_batch, hessian_max_eig, init_params, JetTape, MlpConfig,
    SeedBatch,
};
use crate::optim::{optimizer_step, OptimizerConfig, OptimizerState};
use crate::problems::{sample_points, LossContext, ProblemSpec, SamplingScheme};

use super::{run_training, ExperimentConfig, HarnessError, RunManifest};

// ---------------------------------------------------------------------------
// Width sweep
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidthSweepRow {
    pub width: usize,
    pub rel_err: f64,
    pub abs_err: f64,
    pub final_loss: f64,
    pub final_epoch: u64,
    /// Per-run failure, if any; the sweep continues past failed widths.
    pub error: Option<String>,
}

/// Trains one model per width with the base config's protocol and seed and
/// returns rows sorted by width. Individual run failures land in their row's
/// `error` field without stopping the sweep.
pub fn width_sweep(
    base: &ExperimentConfig,
    widths: &[usize],
) -> Result<Vec<WidthSweepRow>, HarnessError> {
    let mut ws: Vec<usize> = widths.to_vec();
    ws.sort_unstable();
    ws.dedup();
    if ws.len() < 2 {
        return Err(HarnessError::BadConfig(
            "a width sweep needs at least two distinct widths".into(),
        ));
    }
    let mut rows = Vec::with_capacity(ws.len());
    for width in ws {
        let mut config = base.clone();
        config.network.width = width;
        config.output_dir = base
            .output_dir
            .as_ref()
            .map(|d| d.join(format!("width_{width}")));
        match run_training(&config) {
            Ok(out) => rows.push(WidthSweepRow {
                width,
                rel_err: out.manifest.final_rel_err,
                abs_err: out.manifest.final_abs_err,
                final_loss: out.manifest.final_loss,
                final_epoch: out.manifest.final_epoch,
                error: None,
            }),
            Err(e) => rows.push(WidthSweepRow {
                width,
                rel_err: f64::NAN,
                abs_err: f64::NAN,
                final_loss: f64::NAN,
                final_epoch: 0,
                error: Some(e.to_string()),
            }),
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Curvature scan
// ---------------------------------------------------------------------------

/// Least-squares slope of `ln y` against `ln x`. Rejects nonpositive values
/// and duplicate abscissae (degenerate fit).
pub fn fit_loglog_slope(xs: &[f64], ys: &[f64]) -> Result<f64, HarnessError> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(HarnessError::BadConfig(
            "log-log fit needs two or more (x, y) pairs".into(),
        ));
    }
    for (&x, &y) in xs.iter().zip(ys) {
        if !(x.is_finite() && x > 0.0 && y.is_finite() && y > 0.0) {
            return Err(HarnessError::BadConfig(format!(
                "log-log fit needs positive finite data, got ({x}, {y})"
            )));
        }
    }
    for i in 0..xs.len() {
        for j in i + 1..xs.len() {
            if xs[i] == xs[j] {
                return Err(HarnessError::BadConfig(format!(
                    "duplicate abscissa {} makes the fit degenerate",
                    xs[i]
                )));
            }
        }
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = lx.iter().sum::<f64>() / lx.len() as f64;
    let my = ly.iter().sum::<f64>() / ly.len() as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in lx.iter().zip(&ly) {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    Ok(num / den)
}

/// Where along training to measure curvature. The quartic stiffness scaling
/// of the largest Hessian eigenvalue is a property of networks that
/// *represent* the oscillatory solution (the first-layer weights carry the
/// frequency); at a fresh random initialization the forcing-weighted
/// curvature term only grows quadratically. `Fitted` therefore pre-fits the
/// network to the known solution (a seeded, deterministic procedure) before
/// probing; `Init` probes the raw initialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeasurementPoint {
    Init,
    Fitted,
}

/// Probe settings for [`hessian_scan`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HessianProbe {
    pub width: usize,
    pub depth: usize,
    pub n_b: usize,
    pub n_r: usize,
    pub seed: u64,
    pub measure_at: MeasurementPoint,
    pub prefit_epochs: u64,
    pub prefit_lr: f64,
    /// Finite-difference step for the Hessian-vector probe.
    pub fd_eps: f64,
    pub power_iters: usize,
    pub power_tol: f64,
}

impl Default for HessianProbe {
    fn default() -> Self {
        HessianProbe {
            width: 128,
            depth: 1,
            n_b: 32,
            n_r: 256,
            seed: 0,
            measure_at: MeasurementPoint::Fitted,
            prefit_epochs: 20_000,
            prefit_lr: 2e-3,
            fd_eps: 1e-6,
            power_iters: 400,
            power_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HessianScanPoint {
    pub c: f64,
    pub lambda_max: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Fits the network to `sin(Cx)` and its first two derivatives (each term
/// normalized by its natural `C` power so all three carry equal weight)
/// with Adam. Deterministic given the probe seed.
fn solution_prefit(
    cfg: &MlpConfig,
    flat: &mut [f64],
    c: f64,
    epochs: u64,
    lr: f64,
) -> Result<(), HarnessError> {
    let n = 512;
    let mut xs = Array2::zeros((n, 1));
    let mut g = vec![0.0; n];
    let mut g1 = vec![0.0; n];
    let mut g2 = vec![0.0; n];
    for i in 0..n {
        let x = (i as f64 + 0.5) / n as f64;
        xs[(i, 0)] = x;
        g[i] = (c * x).sin();
        g1[i] = c * (c * x).cos();
        g2[i] = -c * c * (c * x).sin();
    }
    let opt = OptimizerConfig::Adam {
        eta: lr,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };
    let mut state = OptimizerState::new(&opt, flat.len());
    let mut params = crate::net::MlpParams::from_flat(cfg, flat)?;
    let mut tape = JetTape::new();
    let mut seeds = SeedBatch::zeros(n, 1, 2);
    let mut grad = vec![0.0; flat.len()];
    let (w1, w2) = (1.0 / (c * c), 1.0 / (c * c * c * c));
    for _ in 0..epochs {
        let out = forward_batch(cfg, &params, xs.view(), 2, &mut tape);
        let scale = 2.0 / n as f64;
        for i in 0..n {
            seeds.value[i] = scale * (out.value[i] - g[i]);
            seeds.d1[(i, 0)] = scale * w1 * (out.d1[(i, 0)] - g1[i]);
            seeds.d2[(i, 0)] = scale * w2 * (out.d2[(i, 0)] - g2[i]);
        }
        grad.fill(0.0);
        backward_accumulate(cfg, &params, &mut tape, &seeds, &mut grad);
        optimizer_step(&opt, &mut state, flat, &grad)?;
        params.copy_from_flat(flat);
    }
    Ok(())
}

/// Estimates the largest eigenvalue of the full training-loss Hessian for a
/// family of stiffness values `C` (one seeded network per value) and fits
/// the log-log growth exponent.
pub fn hessian_scan(
    cs: &[f64],
    probe: &HessianProbe,
) -> Result<(Vec<HessianScanPoint>, f64), HarnessError> {
    if cs.len() < 3 {
        return Err(HarnessError::BadConfig(
            "curvature scan needs at least three stiffness values".into(),
        ));
    }
    for &c in cs {
        if !(c.is_finite() && c > 0.0) {
            return Err(HarnessError::BadConfig(format!(
                "stiffness values must be positive, got {c}"
            )));
        }
    }
    for i in 0..cs.len() {
        for j in i + 1..cs.len() {
            if cs[i] == cs[j] {
                return Err(HarnessError::BadConfig(format!(
                    "duplicate stiffness value {} makes the fit degenerate",
                    cs[i]
                )));
            }
        }
    }

    let mut points = Vec::with_capacity(cs.len());
    for &c in cs {
        let spec = ProblemSpec::poisson(c)?;
        let cfg = MlpConfig::new(1, vec![probe.width; probe.depth]);
        let params = init_params(&cfg, probe.seed)?;
        let mut flat = params.flatten();
        if probe.measure_at == MeasurementPoint::Fitted {
            solution_prefit(&cfg, &mut flat, c, probe.prefit_epochs, probe.prefit_lr)?;
        }
        let pts = sample_points(
            &spec,
            probe.n_b,
            probe.n_r,
            SamplingScheme::UniformRandom,
            probe.seed + 1,
        )?;
        let mut ctx = LossContext::new(&cfg, &spec, &pts)?;
        let mut scratch = crate::net::MlpParams::from_flat(&cfg, &flat)?;
        let mut gbuf = vec![0.0; flat.len()];
        let grad_fn = |w: &[f64]| -> Vec<f64> {
            scratch.copy_from_flat(w);
            match ctx.loss_and_grad(&scratch, &mut gbuf) {
                Ok(_) => gbuf.clone(),
                // A non-finite probe poisons the estimate, which the
                // convergence flag then reports.
                Err(_) => vec![f64::NAN; w.len()],
            }
        };
        let r = hessian_max_eig(
            grad_fn,
            &flat,
            probe.fd_eps,
            probe.power_iters,
            probe.power_tol,
            probe.seed + 2,
        );
        points.push(HessianScanPoint {
            c,
            lambda_max: r.lambda,
            converged: r.converged,
            iterations: r.iterations,
        });
    }
    let lambdas: Vec<f64> = points.iter().map(|p| p.lambda_max).collect();
    let slope = fit_loglog_slope(cs, &lambdas)?;
    Ok((points, slope))
}

// ---------------------------------------------------------------------------
// Comparison table
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub problem: String,
    pub params: String,
    pub optimizer: String,
    pub depth: usize,
    pub width: usize,
    pub epochs: u64,
    pub rel_err: f64,
    pub abs_err: f64,
    pub reference_rel: Option<f64>,
    pub reference_abs: Option<f64>,
    pub from_cache: bool,
}

/// Known reference errors for benchmark setups, shown next to fresh results
/// where the configuration matches.
pub fn reference_errors(config: &ExperimentConfig) -> Option<(f64, f64)> {
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-6 * b.abs().max(1.0);
    let w = config.network.width;
    let e = config.epochs;
    match config.problem {
        ProblemSpec::Poisson { c }
            if close(c, 4.0 * std::f64::consts::PI)
                && w == 500
                && e == 45000
                && matches!(config.optimizer, OptimizerConfig::Adam { .. }) =>
        {
            Some((6.95e-5, 4.45e-5))
        }
        ProblemSpec::Transport { beta } if close(beta, 40.0) && w == 500 && e == 25000 => {
            Some((1.34e-2, 1.11e-2))
        }
        ProblemSpec::ReactionDiffusion { nu, rho }
            if close(nu, 5.0) && close(rho, 6.0) && w == 500 && e == 55000 =>
        {
            Some((9.04e-3, 4.03e-3))
        }
        _ => None,
    }
}

fn problem_columns(spec: &ProblemSpec) -> (String, String) {
    match *spec {
        ProblemSpec::Poisson { c } => ("poisson".into(), format!("C={c:.4}")),
        ProblemSpec::Transport { beta } => ("transport".into(), format!("beta={beta:.4}")),
        ProblemSpec::ReactionDiffusion { nu, rho } => (
            "reaction-diffusion".into(),
            format!("nu={nu:.4} rho={rho:.4}"),
        ),
    }
}

/// Reads a cached run manifest if it matches the expected config hash.
fn load_cached(dir: &Path, expect_hash: &str) -> Option<RunManifest> {
    let manifest: RunManifest =
        serde_json::from_slice(&std::fs::read(dir.join("manifest.json")).ok()?).ok()?;
    if manifest.config_sha256 != expect_hash {
        return None;
    }
    let stored: ExperimentConfig =
        serde_json::from_slice(&std::fs::read(dir.join("config.json")).ok()?).ok()?;
    if stored.content_hash() != expect_hash {
        return None;
    }
    Some(manifest)
}

/// Runs (or loads from `cache`) each experiment and assembles comparison
/// rows. Cache entries are keyed by config content hash; a hash mismatch
/// forces a rerun.
pub fn compare_table(
    configs: &[ExperimentConfig],
    cache: &Path,
) -> Result<Vec<CompareRow>, HarnessError> {
    if configs.is_empty() {
        return Err(HarnessError::BadConfig(
            "comparison table needs at least one config".into(),
        ));
    }
    let mut rows = Vec::with_capacity(configs.len());
    for config in configs {
        let hash = config.content_hash();
        let dir = cache.join(&hash);
        let (manifest, from_cache) = match load_cached(&dir, &hash) {
            Some(m) => (m, true),
            None => {
                let mut run_config = config.clone();
                run_config.output_dir = Some(dir.clone());
                (run_training(&run_config)?.manifest, false)
            }
        };
        let (problem, params) = problem_columns(&config.problem);
        let reference = reference_errors(config);
        rows.push(CompareRow {
            problem,
            params,
            optimizer: config.optimizer.name().to_string(),
            depth: config.network.depth,
            width: config.network.width,
            epochs: config.epochs,
            rel_err: manifest.final_rel_err,
            abs_err: manifest.final_abs_err,
            reference_rel: reference.map(|r| r.0),
            reference_abs: reference.map(|r| r.1),
            from_cache,
        });
    }
    Ok(rows)
}

/// Plain-text rendering of a comparison table.
pub fn render_compare_table(rows: &[CompareRow]) -> String {
    let mut s = String::new();
    s.push_str(&format!(
        "{:<20} {:<22} {:<6} {:>5} {:>5} {:>7} {:>10} {:>10} {:>10} {:>10} {:>6}\n",
        "problem", "params", "opt", "depth", "width", "epochs", "rel_err", "abs_err", "ref_rel",
        "ref_abs", "cache"
    ));
    let opt_num = |v: Option<f64>| match v {
        Some(x) => format!("{x:.3e}"),
        None => "-".to_string(),
    };
    for r in rows {
        s.push_str(&format!(
            "{:<20} {:<22} {:<6} {:>5} {:>5} {:>7} {:>10} {:>10} {:>10} {:>10} {:>6}\n",
            r.problem,
            r.params,
            r.optimizer,
            r.depth,
            r.width,
            r.epochs,
            format!("{:.3e}", r.rel_err),
            format!("{:.3e}", r.abs_err),
            opt_num(r.reference_rel),
            opt_num(r.reference_abs),
            if r.from_cache { "hit" } else { "miss" },
        ));
    }
    s
}
