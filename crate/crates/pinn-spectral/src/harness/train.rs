//! The training loop: full-batch (or minibatched) first-order optimization
//! of the physics-informed loss, with seeded sampling, a logarithmic record
//! schedule, kernel diagnostics at requested epochs, and a self-contained
//! run directory.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::net::{forward_batch, init_params, JetTape, MlpConfig, MlpParams};
use crate::ntk::{
    assemble_kernel, classify_modes, diagnostic_points, dump_kernel, eigendecompose,
    kernel_drift, pl_ratio_from, residual_projection, write_spectrum_csv, KernelMatrix, Spectrum,
};
use crate::optim::{optimizer_step, OptimizerConfig, OptimizerState};
use crate::problems::{
    sample_points, LossBreakdown, LossContext, PointSet, Problem, ProblemError,
};

use super::{
    build_problem, evaluation_grid, exact_on_grid, relative_error, save_weights,
    write_records_csv, ExperimentConfig, HarnessError, TrainRecord,
};

/// One row of `diagnostics.csv`: spectral health of the run at a diagnostic
/// epoch. Kernel quantities are measured on the fixed probe subset; the
/// gradient condition (`||grad L||^2 / L`) on the training objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRow {
    pub epoch: u64,
    pub loss: f64,
    pub grad_condition: f64,
    pub lambda_max: f64,
    pub lambda_min: f64,
    /// Relative Frobenius drift of the probe kernel from the first snapshot.
    pub drift_from_first: f64,
    pub drift_from_prev: f64,
    /// Fraction of squared residual mass carried by the top ten kernel
    /// modes; rising values signal low-frequency-first fitting.
    pub top_mode_fraction: f64,
}

/// Summary of a finished run, persisted as `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_sha256: String,
    pub final_epoch: u64,
    pub records: usize,
    pub final_loss: f64,
    pub final_rel_err: f64,
    pub final_abs_err: f64,
    pub diverged: bool,
    pub early_stopped: bool,
    pub wall_ms_total: f64,
    pub artifacts: Vec<String>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub records: Vec<TrainRecord>,
    pub diagnostics: Vec<DiagnosticRow>,
    /// Flattened weights at the end of the run (the last finite state when
    /// the run diverged).
    pub final_params: Vec<f64>,
    pub manifest: RunManifest,
    pub run_dir: Option<PathBuf>,
}

/// Record epochs: powers of two, the final epoch, any linear stride, and
/// every nonzero diagnostic epoch.
fn record_epochs(config: &ExperimentConfig) -> BTreeSet<u64> {
    let mut set = BTreeSet::new();
    let mut e = 1;
    while e < config.epochs {
        set.insert(e);
        e *= 2;
    }
    set.insert(config.epochs);
    if let Some(k) = config.record_stride {
        let mut e = k;
        while e < config.epochs {
            set.insert(e);
            e += k;
        }
    }
    for &d in &config.diagnostic_epochs {
        if d >= 1 {
            set.insert(d);
        }
    }
    set
}

/// Oscillator parameters backing the per-epoch damping report. For momentum
/// the unit-step physical mapping `alpha = m/(m+mu)`, `eta = 1/(m+mu)`
/// inverts to `m = alpha/eta`, `mu = (1-alpha)/eta`; other optimizers get
/// the neutral `(1, 1)`.
pub fn damping_parameters(opt: &OptimizerConfig) -> (f64, f64) {
    match *opt {
        OptimizerConfig::Sgdm { eta, alpha } => (alpha / eta, (1.0 - alpha) / eta),
        _ => (1.0, 1.0),
    }
}

/// Splits shuffled point indices into minibatches: collocation indices in
/// `batch_r`-sized chunks, boundary indices dealt round-robin so every batch
/// keeps a nonempty boundary term.
fn minibatch_plan(
    n_b: usize,
    n_r: usize,
    batch_r: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<(Vec<usize>, Vec<usize>)> {
    let mut ridx: Vec<usize> = (0..n_r).collect();
    ridx.shuffle(rng);
    let mut bidx: Vec<usize> = (0..n_b).collect();
    bidx.shuffle(rng);
    let n_chunks = n_r.div_ceil(batch_r);
    let mut batches = Vec::with_capacity(n_chunks);
    for c in 0..n_chunks {
        let rs = ridx[c * batch_r..((c + 1) * batch_r).min(n_r)].to_vec();
        let bs: Vec<usize> = (0..n_b.div_ceil(n_chunks))
            .map(|k| bidx[(c + k * n_chunks) % n_b])
            .collect();
        batches.push((bs, rs));
    }
    batches
}

/// Maps the loss evaluator's non-finite abort to `None` so the training
/// loop can treat it as divergence rather than a hard error.
fn finite_or_none(
    r: Result<LossBreakdown, ProblemError>,
) -> Result<Option<LossBreakdown>, HarnessError> {
    match r {
        Ok(lb) => Ok(Some(lb)),
        Err(ProblemError::NonFiniteLoss) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

fn subset_points(points: &PointSet, bidx: &[usize], ridx: &[usize]) -> PointSet {
    let boundary = bidx.iter().map(|&i| points.boundary[i].clone()).collect();
    let mut collocation = Array2::zeros((ridx.len(), points.collocation.ncols()));
    for (row, &i) in ridx.iter().enumerate() {
        collocation.row_mut(row).assign(&points.collocation.row(i));
    }
    PointSet {
        boundary,
        collocation,
        scheme: points.scheme,
        seed: points.seed,
    }
}

struct DiagState {
    points: PointSet,
    ctx: LossContext,
    first_kernel: Option<KernelMatrix>,
    prev_kernel: Option<KernelMatrix>,
    m: f64,
    mu: f64,
}

struct RunDir {
    dir: PathBuf,
    artifacts: Vec<String>,
}

impl RunDir {
    fn track(&mut self, name: &str) -> PathBuf {
        self.artifacts.push(name.to_string());
        self.dir.join(name)
    }
}

/// Trains one configured model. Returns the record stream, diagnostic rows,
/// final (or last finite) weights, and the manifest; when `output_dir` is
/// set, also writes `config.json`, `records.csv`, `diagnostics.csv`,
/// `manifest.json`, weight snapshots, and per-epoch kernel artifacts there.
///
/// A non-finite loss aborts the run: the record stream ends with the last
/// finite state and the manifest carries `diverged: true`. When
/// `stop_at_rel_err` is hit at a record epoch the run ends early with
/// `early_stopped: true`.
pub fn run_training(config: &ExperimentConfig) -> Result<RunOutcome, HarnessError> {
    config.validate()?;
    let spec = config.problem;
    let problem: Problem = build_problem(spec)?;
    let cfg: MlpConfig = config.network.mlp_config(spec.input_dim());
    let p_total = cfg.param_count();

    // Seed layout: parameters from `seed`, training points from `seed + 1`,
    // the diagnostic probe subset from `seed + 2`, minibatch shuffling from
    // `seed + 3`.
    let mut params = init_params(&cfg, config.seed)?;
    let points = sample_points(&spec, config.n_b, config.n_r, config.sampling, config.seed + 1)?;
    let mut ctx = LossContext::new(&cfg, &spec, &points)?;
    let mut flat = params.flatten();
    let mut grad = vec![0.0; p_total];
    let mut opt_state = OptimizerState::new(&config.optimizer, p_total);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed + 3);

    let grid = evaluation_grid(&spec);
    let exact = exact_on_grid(&problem, &grid)?;
    let mut eval_tape = JetTape::new();

    let mut run_dir = match &config.output_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let mut rd = RunDir {
                dir: dir.clone(),
                artifacts: Vec::new(),
            };
            let cfg_path = rd.track("config.json");
            std::fs::write(&cfg_path, serde_json::to_vec_pretty(config)?)?;
            Some(rd)
        }
        None => None,
    };

    let mut diag_epochs: Vec<u64> = config.diagnostic_epochs.clone();
    diag_epochs.sort_unstable();
    diag_epochs.dedup();
    let mut diag_state = if diag_epochs.is_empty() {
        None
    } else {
        let dpoints = diagnostic_points(&spec, config.seed + 2)?;
        let dctx = LossContext::new(&cfg, &spec, &dpoints)?;
        let (m, mu) = damping_parameters(&config.optimizer);
        Some(DiagState {
            points: dpoints,
            ctx: dctx,
            first_kernel: None,
            prev_kernel: None,
            m,
            mu,
        })
    };

    let records_at = record_epochs(config);
    let started = Instant::now();
    let mut records: Vec<TrainRecord> = Vec::new();
    let mut diagnostics: Vec<DiagnosticRow> = Vec::new();
    let mut diverged = false;
    let mut early_stopped = false;
    let mut last_finite_flat = flat.clone();
    let mut last_finite_lb: Option<LossBreakdown> = None;
    let mut last_finite_epoch: u64 = 0;

    let eval_errors = |params: &MlpParams,
                       tape: &mut JetTape|
     -> Result<(f64, f64), HarnessError> {
        let out = forward_batch(&cfg, params, grid.view(), 0, tape);
        let u_hat = out.value.as_slice().expect("contiguous values");
        relative_error(u_hat, &exact)
    };

    let push_record = |records: &mut Vec<TrainRecord>,
                           epoch: u64,
                           lb: &LossBreakdown,
                           rel: f64,
                           abs: f64,
                           wall: &Instant| {
        records.push(TrainRecord {
            epoch,
            loss: lb.total,
            loss_b: lb.boundary,
            loss_r: lb.residual,
            rel_err: rel,
            abs_err: abs,
            wall_ms: wall.elapsed().as_secs_f64() * 1e3,
        });
    };

    // Diagnostic pass at the current weights: weight snapshot, probe-kernel
    // spectrum + damping report, residual-mode projection, drift,
    // gradient-condition check on the training objective.
    let run_diagnostics = |epoch: u64,
                               params: &MlpParams,
                               flat: &[f64],
                               ctx: &mut LossContext,
                               grad: &mut [f64],
                               ds: &mut DiagState,
                               run_dir: &mut Option<RunDir>,
                               diagnostics: &mut Vec<DiagnosticRow>|
     -> Result<(), HarnessError> {
        let mut kernel = assemble_kernel(&cfg, params, &spec, &ds.points)?;
        kernel.meta.epoch = Some(epoch);
        let spectrum: Spectrum = eigendecompose(&kernel)?;
        let report = classify_modes(&spectrum, ds.m, ds.mu)?;
        let dlb = ds.ctx.loss(params)?;
        let proj = residual_projection(&spectrum, &dlb.per_point)?;
        let total_mass: f64 = proj.iter().map(|c| c * c).sum();
        let top_mass: f64 = proj.iter().take(10).map(|c| c * c).sum();
        let top_mode_fraction = if total_mass > 0.0 {
            top_mass / total_mass
        } else {
            1.0
        };
        let drift_from_first = match &ds.first_kernel {
            Some(k0) => kernel_drift(k0, &kernel)?,
            None => 0.0,
        };
        let drift_from_prev = match &ds.prev_kernel {
            Some(kp) => kernel_drift(kp, &kernel)?,
            None => 0.0,
        };
        let lb = ctx.loss_and_grad(params, grad)?;
        let row = DiagnosticRow {
            epoch,
            loss: lb.total,
            grad_condition: pl_ratio_from(lb.total, grad),
            lambda_max: spectrum.lambda_max(),
            lambda_min: spectrum.lambda_min(),
            drift_from_first,
            drift_from_prev,
            top_mode_fraction,
        };
        if let Some(rd) = run_dir {
            save_weights(&rd.track(&format!("weights_epoch{epoch}.bin")), flat, Some(epoch))?;
            dump_kernel(&rd.track(&format!("kernel_epoch{epoch}.bin")), &kernel)?;
            write_spectrum_csv(&rd.track(&format!("spectrum_epoch{epoch}.csv")), &report)?;
            let mut w = csv::Writer::from_path(rd.track(&format!("projection_epoch{epoch}.csv")))
                .map_err(|e| HarnessError::Csv(e.to_string()))?;
            #[derive(Serialize)]
            struct ProjRow {
                mode_index: usize,
                eigenvalue: f64,
                coefficient: f64,
            }
            for (i, &c) in proj.iter().enumerate() {
                w.serialize(ProjRow {
                    mode_index: i,
                    eigenvalue: spectrum.eigenvalues[i],
                    coefficient: c,
                })
                .map_err(|e| HarnessError::Csv(e.to_string()))?;
            }
            w.flush().map_err(|e| HarnessError::Csv(e.to_string()))?;
        }
        if ds.first_kernel.is_none() {
            ds.first_kernel = Some(kernel.clone());
        }
        ds.prev_kernel = Some(kernel);
        diagnostics.push(row);
        Ok(())
    };

    // Pre-training diagnostics and record (epoch 0).
    if diag_epochs.first() == Some(&0) {
        if let Some(ds) = diag_state.as_mut() {
            run_diagnostics(0, &params, &flat, &mut ctx, &mut grad, ds, &mut run_dir, &mut diagnostics)?;
        }
        let lb = ctx.loss(&params)?;
        let (rel, abs) = eval_errors(&params, &mut eval_tape)?;
        push_record(&mut records, 0, &lb, rel, abs, &started);
        last_finite_lb = Some(lb);
    }

    let mut aborted = false;
    for epoch in 1..=config.epochs {
        // Gradient step(s). The loss evaluated here belongs to the weights
        // *before* the update; a non-finite value means the previous step
        // blew the weights up.
        let step_lb = match &config.minibatch {
            None => match finite_or_none(ctx.loss_and_grad(&params, &mut grad))? {
                Some(lb) => {
                    // The pre-step weights are the last state whose loss is
                    // verified finite; snapshot them before stepping.
                    last_finite_flat.copy_from_slice(&flat);
                    last_finite_epoch = epoch - 1;
                    last_finite_lb = Some(lb.clone());
                    optimizer_step(&config.optimizer, &mut opt_state, &mut flat, &grad)?;
                    params.copy_from_flat(&flat);
                    Some(lb)
                }
                None => None,
            },
            Some(mb) => {
                let plan = minibatch_plan(
                    points.n_boundary(),
                    points.n_collocation(),
                    mb.batch_r,
                    &mut shuffle_rng,
                );
                let mut last = None;
                for (i, (bidx, ridx)) in plan.iter().enumerate() {
                    let sub = subset_points(&points, bidx, ridx);
                    let mut sub_ctx = LossContext::new(&cfg, &spec, &sub)?;
                    match finite_or_none(sub_ctx.loss_and_grad(&params, &mut grad))? {
                        Some(lb) => {
                            if i == 0 {
                                last_finite_flat.copy_from_slice(&flat);
                                last_finite_epoch = epoch - 1;
                                last_finite_lb = None; // batch loss != full loss
                            }
                            optimizer_step(&config.optimizer, &mut opt_state, &mut flat, &grad)?;
                            params.copy_from_flat(&flat);
                            last = Some(lb);
                        }
                        None => {
                            last = None;
                            break;
                        }
                    }
                }
                last
            }
        };

        if step_lb.is_none() {
            aborted = true;
            break;
        }

        if diag_epochs.binary_search(&epoch).is_ok() {
            if let Some(ds) = diag_state.as_mut() {
                if let Err(e) = run_diagnostics(
                    epoch, &params, &flat, &mut ctx, &mut grad, ds, &mut run_dir, &mut diagnostics,
                ) {
                    // Diagnostics at a blown-up state fail on the loss or
                    // eigensolve; treat that as divergence, anything else as
                    // a real error.
                    if finite_or_none(ctx.loss(&params))?.is_none() {
                        aborted = true;
                        break;
                    }
                    return Err(e);
                }
            }
        }
        if records_at.contains(&epoch) {
            let Some(lb_now) = finite_or_none(ctx.loss(&params))? else {
                aborted = true;
                break;
            };
            let (rel, abs) = eval_errors(&params, &mut eval_tape)?;
            push_record(&mut records, epoch, &lb_now, rel, abs, &started);
            // This state is verified finite; advance the rollback snapshot.
            last_finite_flat.copy_from_slice(&flat);
            last_finite_epoch = epoch;
            last_finite_lb = Some(lb_now);
            if config.stop_at_rel_err.is_some_and(|t| rel <= t) {
                early_stopped = true;
                break;
            }
        }
    }

    if aborted {
        // Roll back to the last finite weights and make sure the record
        // stream ends with a finite entry.
        diverged = true;
        flat.copy_from_slice(&last_finite_flat);
        params.copy_from_flat(&flat);
        if records.last().map(|r| r.epoch) != Some(last_finite_epoch) {
            let lb = match last_finite_lb.take() {
                Some(lb) => Some(lb),
                None => finite_or_none(ctx.loss(&params))?,
            };
            if let Some(lb) = lb {
                let (rel, abs) = eval_errors(&params, &mut eval_tape)?;
                push_record(&mut records, last_finite_epoch, &lb, rel, abs, &started);
            }
        }
    }

    let last = records.last().ok_or_else(|| {
        HarnessError::BadConfig("training produced no records".into())
    })?;
    let mut manifest = RunManifest {
        config_sha256: config.content_hash(),
        final_epoch: last.epoch,
        records: records.len(),
        final_loss: last.loss,
        final_rel_err: last.rel_err,
        final_abs_err: last.abs_err,
        diverged,
        early_stopped,
        wall_ms_total: started.elapsed().as_secs_f64() * 1e3,
        artifacts: Vec::new(),
    };

    if let Some(rd) = run_dir.as_mut() {
        write_records_csv(&rd.track("records.csv"), &records)?;
        if !diagnostics.is_empty() {
            let mut w = csv::Writer::from_path(rd.track("diagnostics.csv"))
                .map_err(|e| HarnessError::Csv(e.to_string()))?;
            for row in &diagnostics {
                w.serialize(row).map_err(|e| HarnessError::Csv(e.to_string()))?;
            }
            w.flush().map_err(|e| HarnessError::Csv(e.to_string()))?;
        }
        save_weights(&rd.track("weights_final.bin"), &flat, Some(last.epoch))?;
        manifest.artifacts = rd.artifacts.clone();
        manifest.artifacts.push("manifest.json".to_string());
        std::fs::write(
            rd.dir.join("manifest.json"),
            serde_json::to_vec_pretty(&manifest)?,
        )?;
    }

    Ok(RunOutcome {
        records,
        diagnostics,
        final_params: flat,
        manifest,
        run_dir: run_dir.map(|rd| rd.dir),
    })
}

/// Reads `diagnostics.csv` back (inverse of the writer in [`run_training`]).
pub fn read_diagnostics_csv(path: &Path) -> Result<Vec<DiagnosticRow>, HarnessError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| HarnessError::Csv(e.to_string()))?;
    r.deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| HarnessError::Csv(e.to_string()))
}
