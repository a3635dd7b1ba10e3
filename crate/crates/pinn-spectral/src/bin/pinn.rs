//! Command-line front end: training runs, kernel inspection, width sweeps,
//! linearized-dynamics simulation, curvature scans, the reaction-diffusion
//! reference oracle, and comparison tables.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use pinn_spectral::harness::{
    apply_scale, cache_dir, compare_table, damping_parameters, hessian_scan, load_weights,
    render_compare_table, run_training, width_sweep, ExperimentConfig, HessianProbe,
    MeasurementPoint, Scale,
};
use pinn_spectral::lindyn::{simulate_linear_sgdm, write_trajectory_csv};
use pinn_spectral::net::MlpParams;
use pinn_spectral::ntk::{
    assemble_kernel, classify_modes, diagnostic_points, eigendecompose, read_spectrum_csv,
    write_spectrum_csv,
};
use pinn_spectral::optim::{alpha_from_physical, eta_from_physical};
use pinn_spectral::problems::oracle::{cache_path, load_or_solve, RdOracleConfig};

#[derive(Parser)]
#[command(
    name = "pinn",
    version,
    about = "Train small physics-informed networks and inspect their kernel spectra"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one configured model and write a run directory.
    Train {
        /// Path to an experiment config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Problem size: `paper` keeps the config, `desk` caps width at 128
        /// and divides epochs by 5.
        #[arg(long, default_value = "paper")]
        scale: String,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute the kernel spectrum of a stored run at a snapshot epoch.
    Ntk {
        /// Run directory written by `train`.
        #[arg(long)]
        run: PathBuf,
        /// Diagnostic epoch whose weight snapshot to analyze.
        #[arg(long)]
        epoch: u64,
    },
    /// Train the same config at several widths and tabulate errors.
    SweepWidth {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated hidden widths, e.g. 50,100,200,500.
        #[arg(long, value_delimiter = ',')]
        widths: Vec<usize>,
    },
    /// Simulate the linearized momentum recurrence on a stored spectrum.
    LinSim {
        /// Spectrum CSV (as written by `train` diagnostics or `ntk`).
        #[arg(long)]
        spectrum: PathBuf,
        /// Oscillator mass.
        #[arg(long)]
        m: f64,
        /// Friction coefficient.
        #[arg(long)]
        mu: f64,
        /// Discretization step mapping (m, mu, dt) onto (alpha, eta).
        #[arg(long)]
        dt: f64,
        #[arg(long)]
        steps: usize,
        /// Record every k-th step.
        #[arg(long, default_value_t = 1)]
        record_every: usize,
        /// Output trajectory CSV.
        #[arg(long, default_value = "lin_sim.csv")]
        out: PathBuf,
    },
    /// Scan the largest loss-Hessian eigenvalue against stiffness.
    HessianScan {
        /// Problem family; only `poisson` has a stiffness scan.
        #[arg(long, default_value = "poisson")]
        problem: String,
        /// Comma-separated stiffness values C.
        #[arg(long, value_delimiter = ',')]
        params: Vec<f64>,
        /// Probe the raw `init` or the solution-`fitted` network.
        #[arg(long, default_value = "fitted")]
        measure_at: String,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        prefit_epochs: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Solve (or load) the reaction-diffusion reference and print its
    /// cache location.
    RdOracle {
        #[arg(long)]
        nu: f64,
        #[arg(long)]
        rho: f64,
        #[arg(long, default_value_t = 512)]
        grid: usize,
        #[arg(long, default_value_t = 1e-4)]
        dt: f64,
        #[arg(long, default_value_t = 1.0)]
        t_end: f64,
    },
    /// Run (or load cached) experiments for every config in a directory and
    /// print a comparison table.
    Compare {
        /// Directory of experiment config JSON files.
        #[arg(long)]
        configs: PathBuf,
    },
}

fn read_config(path: &Path) -> Result<ExperimentConfig> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let config: ExperimentConfig =
        serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))?;
    Ok(config)
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Train {
            config,
            scale,
            seed,
            out,
        } => {
            let mut cfg = read_config(&config)?;
            let scale: Scale = scale.parse().map_err(anyhow::Error::msg)?;
            apply_scale(&mut cfg, scale);
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(dir) = out {
                cfg.output_dir = Some(dir);
            }
            if cfg.output_dir.is_none() {
                cfg.output_dir = Some(PathBuf::from("runs").join(&cfg.content_hash()[..12]));
            }
            let outcome = run_training(&cfg)?;
            let m = &outcome.manifest;
            println!(
                "run finished: epoch {} loss {:.6e} rel_err {:.6e} abs_err {:.6e}",
                m.final_epoch, m.final_loss, m.final_rel_err, m.final_abs_err
            );
            if m.diverged {
                println!("warning: run diverged; stream ends at the last finite record");
            }
            if m.early_stopped {
                println!("stopped early at the configured error target");
            }
            if let Some(dir) = &outcome.run_dir {
                println!("artifacts: {}", dir.display());
            }
        }
        Cmd::Ntk { run, epoch } => {
            let config = read_config(&run.join("config.json"))?;
            let snapshot = run.join(format!("weights_epoch{epoch}.bin"));
            if !snapshot.exists() {
                bail!(
                    "no weight snapshot at epoch {epoch} in {} (diagnostic epochs: {:?})",
                    run.display(),
                    config.diagnostic_epochs
                );
            }
            let flat = load_weights(&snapshot)?;
            let spec = config.problem;
            let mlp = config.network.mlp_config(spec.input_dim());
            let params = MlpParams::from_flat(&mlp, &flat)?;
            let points = diagnostic_points(&spec, config.seed + 2)?;
            let mut kernel = assemble_kernel(&mlp, &params, &spec, &points)?;
            kernel.meta.epoch = Some(epoch);
            let spectrum = eigendecompose(&kernel)?;
            let (m, mu) = damping_parameters(&config.optimizer);
            let report = classify_modes(&spectrum, m, mu)?;
            let out = run.join(format!("spectrum_epoch{epoch}.csv"));
            write_spectrum_csv(&out, &report)?;
            let n = spectrum.len();
            let (mut under, mut critical, mut over) = (0usize, 0usize, 0usize);
            for mode in &report.modes {
                match mode.regime {
                    pinn_spectral::ntk::Regime::Under => under += 1,
                    pinn_spectral::ntk::Regime::Critical => critical += 1,
                    pinn_spectral::ntk::Regime::Over => over += 1,
                }
            }
            println!(
                "epoch {epoch}: {n} modes, lambda_max {:.6e}, lambda_min {:.6e}",
                spectrum.lambda_max(),
                spectrum.lambda_min()
            );
            println!("damping (gamma {:.4}): {under} under / {critical} critical / {over} over", report.gamma);
            println!("spectrum written to {}", out.display());
        }
        Cmd::SweepWidth { config, widths } => {
            let base = read_config(&config)?;
            let rows = width_sweep(&base, &widths)?;
            println!(
                "{:>6} {:>12} {:>12} {:>12} {:>8}  error",
                "width", "rel_err", "abs_err", "loss", "epoch"
            );
            for r in &rows {
                println!(
                    "{:>6} {:>12.4e} {:>12.4e} {:>12.4e} {:>8}  {}",
                    r.width,
                    r.rel_err,
                    r.abs_err,
                    r.final_loss,
                    r.final_epoch,
                    r.error.as_deref().unwrap_or("-")
                );
            }
        }
        Cmd::LinSim {
            spectrum,
            m,
            mu,
            dt,
            steps,
            record_every,
            out,
        } => {
            let rows = read_spectrum_csv(&spectrum)?;
            if rows.is_empty() {
                bail!("spectrum file {} holds no modes", spectrum.display());
            }
            let kappas: Vec<f64> = rows.iter().map(|r| r.kappa).collect();
            let e0 = vec![1.0; kappas.len()];
            let alpha = alpha_from_physical(m, mu, dt)?;
            let eta = eta_from_physical(m, mu, dt)?;
            let tr = simulate_linear_sgdm(&kappas, &e0, alpha, eta, steps, record_every)?;
            write_trajectory_csv(&out, &tr)?;
            println!(
                "simulated {} modes for {} steps (alpha {:.6}, eta {:.6e})",
                kappas.len(),
                steps,
                alpha,
                eta
            );
            if tr.diverged {
                println!("warning: a mode exceeded the divergence guard; trajectory truncated");
            }
            println!("trajectory written to {}", out.display());
        }
        Cmd::HessianScan {
            problem,
            params,
            measure_at,
            width,
            prefit_epochs,
            seed,
        } => {
            if problem != "poisson" {
                bail!("the stiffness scan is defined for the poisson family only");
            }
            let mut probe = HessianProbe::default();
            probe.measure_at = match measure_at.as_str() {
                "init" => MeasurementPoint::Init,
                "fitted" => MeasurementPoint::Fitted,
                other => bail!("unknown measurement point {other:?} (expected init|fitted)"),
            };
            if let Some(w) = width {
                probe.width = w;
            }
            if let Some(e) = prefit_epochs {
                probe.prefit_epochs = e;
            }
            if let Some(s) = seed {
                probe.seed = s;
            }
            let (points, slope) = hessian_scan(&params, &probe)?;
            println!("{:>12} {:>14} {:>10} {:>6}", "C", "lambda_max", "iters", "conv");
            for p in &points {
                println!(
                    "{:>12.6} {:>14.6e} {:>10} {:>6}",
                    p.c,
                    p.lambda_max,
                    p.iterations,
                    if p.converged { "yes" } else { "no" }
                );
            }
            println!("log-log slope: {slope:.4}");
        }
        Cmd::RdOracle {
            nu,
            rho,
            grid,
            dt,
            t_end,
        } => {
            let cfg = RdOracleConfig {
                grid_n: grid,
                dt,
                t_end,
            };
            let dir = cache_dir();
            std::fs::create_dir_all(&dir)?;
            let reference = load_or_solve(&dir, nu, rho, &cfg)?;
            let path = cache_path(&dir, nu, rho, &cfg);
            println!(
                "reference solved: grid {} x {} (dt_eff {:.3e}, t_end {})",
                reference.n_steps() + 1,
                reference.grid_n,
                reference.dt_eff,
                reference.t_end
            );
            println!("cached at {}", path.display());
        }
        Cmd::Compare { configs } => {
            let mut files: Vec<PathBuf> = std::fs::read_dir(&configs)
                .with_context(|| format!("reading {}", configs.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "json"))
                .collect();
            files.sort();
            if files.is_empty() {
                bail!("no .json configs found in {}", configs.display());
            }
            let mut parsed = Vec::with_capacity(files.len());
            for f in &files {
                parsed.push(read_config(f)?);
            }
            let cache = cache_dir().join("compare");
            std::fs::create_dir_all(&cache)?;
            let rows = compare_table(&parsed, &cache)?;
            print!("{}", render_compare_table(&rows));
        }
    }
    Ok(())
}
