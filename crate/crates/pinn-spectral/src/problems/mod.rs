//! The three PDE benchmarks, their point sets, and the training loss.
//!
//! Problems are posed on fixed domains:
//! - Poisson: `u_xx = f` on `[0, 1]` with `f(x) = -C^2 sin(Cx)`, `u(0) = u(1) = 0`,
//!   exact solution `sin(Cx)` (for C a multiple of pi, as in every preset).
//! - Transport: `u_t + beta u_x = 0` on `[0, 2pi] x [0, 1]`, `u(x, 0) = sin(x)`,
//!   periodic in x, exact solution `sin(x - beta t)`.
//! - Reaction-diffusion: `u_t = nu u_xx + rho u (1 - u)` on `[0, 2pi] x [0, 1]`,
//!   Gaussian initial bump, periodic in x; the reference solution comes from a
//!   split-step spectral integrator (see [`oracle`]).
//!
//! The loss is the plain two-term mean of squares, no extra weights:
//! `L = mean_b (u - g)^2 + mean_r (D[u] - f)^2`.

pub mod oracle;

use std::collections::HashMap;
use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::net::{
    backward_accumulate, forward_batch, Jet2, JetSeeds, JetTape, MlpConfig, MlpParams, Observable,
    SeedBatch,
};
use oracle::RdReference;

pub const TWO_PI: f64 = std::f64::consts::TAU;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("invalid problem parameter: {0}")]
    BadParam(String),
    #[error("invalid point set: {0}")]
    BadPointSet(String),
    #[error("loss evaluated to a non-finite value")]
    NonFiniteLoss,
    #[error("reaction-diffusion reference grid not built; construct the problem with an oracle")]
    MissingReference,
    #[error(transparent)]
    Oracle(#[from] oracle::OracleError),
}

/// PDE instance: kind plus stiffness parameters. Domain bounds and boundary
/// data are fixed per kind (see module docs).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProblemSpec {
    Poisson { c: f64 },
    Transport { beta: f64 },
    ReactionDiffusion { nu: f64, rho: f64 },
}

impl ProblemSpec {
    pub fn poisson(c: f64) -> Result<Self, ProblemError> {
        require_positive("C", c)?;
        Ok(ProblemSpec::Poisson { c })
    }

    pub fn transport(beta: f64) -> Result<Self, ProblemError> {
        require_positive("beta", beta)?;
        Ok(ProblemSpec::Transport { beta })
    }

    pub fn reaction_diffusion(nu: f64, rho: f64) -> Result<Self, ProblemError> {
        require_positive("nu", nu)?;
        require_positive("rho", rho)?;
        Ok(ProblemSpec::ReactionDiffusion { nu, rho })
    }

    pub fn validate(&self) -> Result<(), ProblemError> {
        match *self {
            ProblemSpec::Poisson { c } => require_positive("C", c),
            ProblemSpec::Transport { beta } => require_positive("beta", beta),
            ProblemSpec::ReactionDiffusion { nu, rho } => {
                require_positive("nu", nu)?;
                require_positive("rho", rho)
            }
        }
    }

    /// 1 for Poisson, 2 (x, t) for the time-dependent problems.
    pub fn input_dim(&self) -> usize {
        match self {
            ProblemSpec::Poisson { .. } => 1,
            _ => 2,
        }
    }

    /// Spatial interval.
    pub fn x_range(&self) -> (f64, f64) {
        match self {
            ProblemSpec::Poisson { .. } => (0.0, 1.0),
            _ => (0.0, TWO_PI),
        }
    }

    /// Time horizon for the time-dependent problems.
    pub fn t_range(&self) -> Option<(f64, f64)> {
        match self {
            ProblemSpec::Poisson { .. } => None,
            _ => Some((0.0, 1.0)),
        }
    }

    /// Highest input-derivative order the residual reads.
    pub fn residual_order(&self) -> usize {
        match self {
            ProblemSpec::Transport { .. } => 1,
            _ => 2,
        }
    }

    /// Residual forcing: nonzero only for Poisson, `f(x) = -C^2 sin(Cx)`.
    pub fn forcing(&self, x: &[f64]) -> f64 {
        match *self {
            ProblemSpec::Poisson { c } => -c * c * (c * x[0]).sin(),
            _ => 0.0,
        }
    }

    /// Initial condition of the time-dependent problems, as a function of x.
    pub fn initial(&self, x: f64) -> f64 {
        match *self {
            ProblemSpec::Poisson { .. } => 0.0,
            ProblemSpec::Transport { .. } => x.sin(),
            // Gaussian bump centered at pi with width parameter pi^2/2.
            ProblemSpec::ReactionDiffusion { .. } => {
                let d = x - std::f64::consts::PI;
                (-(d * d) / (std::f64::consts::PI.powi(2) / 2.0)).exp()
            }
        }
    }

    /// Differential-operator mismatch `D[u] - f` evaluated from a jet.
    pub fn residual(&self, jet: &Jet2, x: &[f64]) -> f64 {
        match *self {
            ProblemSpec::Poisson { .. } => jet.d2[0] - self.forcing(x),
            ProblemSpec::Transport { beta } => jet.d1[1] + beta * jet.d1[0],
            ProblemSpec::ReactionDiffusion { nu, rho } => {
                jet.d1[1] - nu * jet.d2[0] - rho * jet.value * (1.0 - jet.value)
            }
        }
    }
}

fn require_positive(name: &str, v: f64) -> Result<(), ProblemError> {
    if !v.is_finite() || v <= 0.0 {
        Err(ProblemError::BadParam(format!(
            "{name} must be positive and finite, got {v}"
        )))
    } else {
        Ok(())
    }
}

/// The PDE residual as a differentiable jet observable; its weight gradient
/// is what fills the collocation rows of the tangent kernel. For
/// reaction-diffusion the nonlinearity contributes `-rho (1 - 2u)` to the
/// value-channel seed.
pub struct ResidualObservable<'a>(pub &'a ProblemSpec);

impl Observable for ResidualObservable<'_> {
    fn order(&self) -> usize {
        self.0.residual_order()
    }

    fn value(&self, jet: &Jet2, x: &[f64]) -> f64 {
        self.0.residual(jet, x)
    }

    fn seeds(&self, jet: &Jet2, x: &[f64]) -> JetSeeds {
        let mut s = JetSeeds::zeros(x.len());
        match *self.0 {
            ProblemSpec::Poisson { .. } => s.d2[0] = 1.0,
            ProblemSpec::Transport { beta } => {
                s.d1[0] = beta;
                s.d1[1] = 1.0;
            }
            ProblemSpec::ReactionDiffusion { nu, rho } => {
                s.value = -rho * (1.0 - 2.0 * jet.value);
                s.d1[1] = 1.0;
                s.d2[0] = -nu;
            }
        }
        s
    }
}

/// A problem bundled with whatever reference data its error metrics need.
/// Only reaction-diffusion carries extra state (the oracle grid).
#[derive(Debug, Clone)]
pub struct Problem {
    pub spec: ProblemSpec,
    rd_reference: Option<Arc<RdReference>>,
}

impl Problem {
    /// Wraps a spec without reference data. Sufficient for training;
    /// reaction-diffusion error metrics will report `MissingReference`.
    pub fn bare(spec: ProblemSpec) -> Result<Self, ProblemError> {
        spec.validate()?;
        Ok(Problem {
            spec,
            rd_reference: None,
        })
    }

    pub fn with_rd_reference(spec: ProblemSpec, r: Arc<RdReference>) -> Result<Self, ProblemError> {
        spec.validate()?;
        Ok(Problem {
            spec,
            rd_reference: Some(r),
        })
    }

    pub fn rd_reference(&self) -> Option<&RdReference> {
        self.rd_reference.as_deref()
    }

    /// Exact (or reference) solution value at a point.
    pub fn exact(&self, x: &[f64]) -> Result<f64, ProblemError> {
        match self.spec {
            ProblemSpec::Poisson { c } => Ok((c * x[0]).sin()),
            ProblemSpec::Transport { beta } => Ok((x[0] - beta * x[1]).sin()),
            ProblemSpec::ReactionDiffusion { .. } => {
                let r = self.rd_reference.as_ref().ok_or(ProblemError::MissingReference)?;
                Ok(r.evaluate(x[0], x[1]))
            }
        }
    }
}

/// Builds a runnable problem. For reaction-diffusion this solves (or loads
/// from `cache_dir`) the reference grid with the given oracle configuration.
pub fn make_problem(
    spec: ProblemSpec,
    oracle_cfg: &oracle::RdOracleConfig,
    cache_dir: Option<&std::path::Path>,
) -> Result<Problem, ProblemError> {
    spec.validate()?;
    match spec {
        ProblemSpec::ReactionDiffusion { nu, rho } => {
            let r = match cache_dir {
                Some(dir) => oracle::load_or_solve(dir, nu, rho, oracle_cfg)?,
                None => oracle::rd_reference_solve(nu, rho, oracle_cfg)?,
            };
            Problem::with_rd_reference(spec, Arc::new(r))
        }
        _ => Problem::bare(spec),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingScheme {
    #[default]
    UniformRandom,
    Equispaced,
}

/// One boundary-loss term: either a Dirichlet/initial match at a point, or a
/// periodic identification of two points (which enters the loss as a single
/// squared mismatch).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BoundaryPoint {
    Dirichlet { x: Vec<f64>, target: f64 },
    PeriodicPair { a: Vec<f64>, b: Vec<f64> },
}

/// Sampled training points. Boundary entries count toward `N_b` (a periodic
/// pair is one term), collocation rows toward `N_r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSet {
    pub boundary: Vec<BoundaryPoint>,
    /// `(n_r, input_dim)` interior points.
    pub collocation: Array2<f64>,
    pub scheme: SamplingScheme,
    pub seed: u64,
}

impl PointSet {
    pub fn n_boundary(&self) -> usize {
        self.boundary.len()
    }

    pub fn n_collocation(&self) -> usize {
        self.collocation.nrows()
    }

    pub fn validate(&self, problem: &ProblemSpec) -> Result<(), ProblemError> {
        let d = problem.input_dim();
        if self.collocation.ncols() != d {
            return Err(ProblemError::BadPointSet(format!(
                "collocation points have {} coords, problem needs {d}",
                self.collocation.ncols()
            )));
        }
        if self.boundary.is_empty() || self.collocation.nrows() == 0 {
            return Err(ProblemError::BadPointSet(
                "need at least one boundary term and one collocation point".into(),
            ));
        }
        for bp in &self.boundary {
            match bp {
                BoundaryPoint::Dirichlet { x, .. } => {
                    if x.len() != d {
                        return Err(ProblemError::BadPointSet("boundary point dim".into()));
                    }
                }
                BoundaryPoint::PeriodicPair { a, b } => {
                    if a.len() != d || b.len() != d {
                        return Err(ProblemError::BadPointSet("pair point dim".into()));
                    }
                    if d == 2 && a[1] != b[1] {
                        return Err(ProblemError::BadPointSet(format!(
                            "periodic pair must share its t coordinate ({} vs {})",
                            a[1], b[1]
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Draws the training point set. Deterministic in `(problem, counts, scheme,
/// seed)`.
///
/// Poisson: boundary entries alternate the endpoints 0, 1, 0, 1, ... with
/// target 0; collocation covers the open interval. Time-dependent problems:
/// `n_b` splits evenly between initial-condition points (t = 0, target from
/// the initial profile; odd remainder goes here) and periodic pairs
/// `((0, t), (2pi, t))` at shared sampled times. Equispaced collocation uses
/// midpoint grids, so points stay interior; in 2-D the lattice is
/// aspect-proportional and truncated to exactly `n_r` points.
pub fn sample_points(
    problem: &ProblemSpec,
    n_b: usize,
    n_r: usize,
    scheme: SamplingScheme,
    seed: u64,
) -> Result<PointSet, ProblemError> {
    use rand::Rng;
    use rand::SeedableRng;
    if n_b == 0 || n_r == 0 {
        return Err(ProblemError::BadPointSet(
            "n_b and n_r must both be nonzero".into(),
        ));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let (x_lo, x_hi) = problem.x_range();
    let lx = x_hi - x_lo;

    let mut boundary = Vec::with_capacity(n_b);
    let collocation;

    match problem.t_range() {
        None => {
            for i in 0..n_b {
                let x = if i % 2 == 0 { x_lo } else { x_hi };
                boundary.push(BoundaryPoint::Dirichlet {
                    x: vec![x],
                    target: 0.0,
                });
            }
            let xs: Vec<f64> = match scheme {
                SamplingScheme::UniformRandom => {
                    (0..n_r).map(|_| x_lo + lx * rng.random::<f64>()).collect()
                }
                SamplingScheme::Equispaced => (0..n_r)
                    .map(|i| x_lo + lx * (i as f64 + 0.5) / n_r as f64)
                    .collect(),
            };
            collocation = Array2::from_shape_vec((n_r, 1), xs).unwrap();
        }
        Some((t_lo, t_hi)) => {
            let lt = t_hi - t_lo;
            let n_init = n_b / 2 + n_b % 2;
            let n_pair = n_b / 2;
            let init_xs: Vec<f64> = match scheme {
                SamplingScheme::UniformRandom => (0..n_init)
                    .map(|_| x_lo + lx * rng.random::<f64>())
                    .collect(),
                SamplingScheme::Equispaced => (0..n_init)
                    .map(|i| x_lo + lx * (i as f64 + 0.5) / n_init as f64)
                    .collect(),
            };
            for x in init_xs {
                boundary.push(BoundaryPoint::Dirichlet {
                    x: vec![x, t_lo],
                    target: problem.initial(x),
                });
            }
            let pair_ts: Vec<f64> = match scheme {
                SamplingScheme::UniformRandom => (0..n_pair)
                    .map(|_| t_lo + lt * rng.random::<f64>())
                    .collect(),
                SamplingScheme::Equispaced => (0..n_pair)
                    .map(|i| t_lo + lt * (i as f64 + 0.5) / n_pair.max(1) as f64)
                    .collect(),
            };
            for t in pair_ts {
                boundary.push(BoundaryPoint::PeriodicPair {
                    a: vec![x_lo, t],
                    b: vec![x_hi, t],
                });
            }
            let mut pts = Vec::with_capacity(n_r * 2);
            match scheme {
                SamplingScheme::UniformRandom => {
                    for _ in 0..n_r {
                        pts.push(x_lo + lx * rng.random::<f64>());
                        pts.push(t_lo + lt * rng.random::<f64>());
                    }
                }
                SamplingScheme::Equispaced => {
                    // Aspect-proportional midpoint lattice, truncated to n_r.
                    let nx = ((n_r as f64 * lx / lt).sqrt().ceil() as usize).max(1);
                    let nt = n_r.div_ceil(nx);
                    'fill: for it in 0..nt {
                        for ix in 0..nx {
                            if pts.len() / 2 == n_r {
                                break 'fill;
                            }
                            pts.push(x_lo + lx * (ix as f64 + 0.5) / nx as f64);
                            pts.push(t_lo + lt * (it as f64 + 0.5) / nt as f64);
                        }
                    }
                }
            }
            collocation = Array2::from_shape_vec((n_r, 2), pts).unwrap();
        }
    }

    let ps = PointSet {
        boundary,
        collocation,
        scheme,
        seed,
    };
    ps.validate(problem)?;
    Ok(ps)
}

/// Loss terms and raw per-point residuals. `total` is computed as
/// `boundary + residual`, each a plain mean of squares. `per_point` lists
/// the unsquared mismatches, boundary terms first then collocation, in point
/// order (this is the vector the kernel-mode projections consume).
#[derive(Debug, Clone)]
pub struct LossBreakdown {
    pub total: f64,
    pub boundary: f64,
    pub residual: f64,
    pub per_point: Vec<f64>,
}

/// One boundary-loss term wired to rows of the deduplicated point table.
#[derive(Debug, Clone, Copy)]
pub(crate) enum BTerm {
    Value { pt: usize, target: f64 },
    Pair { a: usize, b: usize },
}

/// Deduplicated evaluation layout for a fixed `(problem, point set)`: unique
/// evaluation points (Poisson's repeated endpoints collapse to two rows),
/// term wiring in point-set order, and cached forcing values. Shared between
/// the loss and the tangent-kernel assembly so their term orderings agree.
pub(crate) struct PointLayout {
    pub(crate) xs: Array2<f64>,
    pub(crate) bterms: Vec<BTerm>,
    pub(crate) colloc_pt: Vec<usize>,
    pub(crate) forcing: Vec<f64>,
}

impl PointLayout {
    pub(crate) fn new(spec: &ProblemSpec, points: &PointSet) -> Result<Self, ProblemError> {
        points.validate(spec)?;
        let d = spec.input_dim();
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut coords: Vec<f64> = Vec::new();
        let mut intern = |x: &[f64]| -> usize {
            let key: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
            if let Some(&i) = index.get(&key) {
                return i;
            }
            let i = coords.len() / x.len();
            coords.extend_from_slice(x);
            index.insert(key, i);
            i
        };

        let mut bterms = Vec::with_capacity(points.boundary.len());
        for bp in &points.boundary {
            match bp {
                BoundaryPoint::Dirichlet { x, target } => bterms.push(BTerm::Value {
                    pt: intern(x),
                    target: *target,
                }),
                BoundaryPoint::PeriodicPair { a, b } => bterms.push(BTerm::Pair {
                    a: intern(a),
                    b: intern(b),
                }),
            }
        }
        let mut colloc_pt = Vec::with_capacity(points.n_collocation());
        let mut forcing = Vec::with_capacity(points.n_collocation());
        for row in points.collocation.rows() {
            let x = row.as_slice().unwrap();
            colloc_pt.push(intern(x));
            forcing.push(spec.forcing(x));
        }
        let n_pts = coords.len() / d;
        let xs = Array2::from_shape_vec((n_pts, d), coords).unwrap();
        Ok(PointLayout {
            xs,
            bterms,
            colloc_pt,
            forcing,
        })
    }

    pub(crate) fn n_unique(&self) -> usize {
        self.xs.nrows()
    }
}

/// Reusable loss evaluator over a fixed point layout; owns the tape and
/// scratch so repeated epochs allocate nothing.
pub struct LossContext {
    cfg: MlpConfig,
    spec: ProblemSpec,
    layout: PointLayout,
    order: usize,
    tape: JetTape,
    seeds: SeedBatch,
    sort_buf: Vec<f64>,
}

impl LossContext {
    pub fn new(
        cfg: &MlpConfig,
        spec: &ProblemSpec,
        points: &PointSet,
    ) -> Result<Self, ProblemError> {
        let d = spec.input_dim();
        assert_eq!(
            cfg.input_dim, d,
            "network input dim does not match the problem"
        );
        let layout = PointLayout::new(spec, points)?;
        let n_pts = layout.n_unique();
        Ok(LossContext {
            cfg: cfg.clone(),
            spec: *spec,
            layout,
            order: spec.residual_order(),
            tape: JetTape::new(),
            seeds: SeedBatch::zeros(n_pts, d, spec.residual_order()),
            sort_buf: Vec::new(),
        })
    }

    pub fn n_boundary(&self) -> usize {
        self.layout.bterms.len()
    }

    pub fn n_collocation(&self) -> usize {
        self.layout.colloc_pt.len()
    }

    /// Loss only (no gradient).
    pub fn loss(&mut self, params: &MlpParams) -> Result<LossBreakdown, ProblemError> {
        self.eval(params, None)
    }

    /// Loss plus the full-batch loss gradient, accumulated into `grad`
    /// (which is zeroed here). The gradient of the mean-of-squares terms
    /// seeds each point with `2/N * residual` on the matching jet channels.
    pub fn loss_and_grad(
        &mut self,
        params: &MlpParams,
        grad: &mut [f64],
    ) -> Result<LossBreakdown, ProblemError> {
        grad.fill(0.0);
        self.eval(params, Some(grad))
    }

    fn eval(
        &mut self,
        params: &MlpParams,
        grad: Option<&mut [f64]>,
    ) -> Result<LossBreakdown, ProblemError> {
        let want_grad = grad.is_some();
        let out = forward_batch(
            &self.cfg,
            params,
            self.layout.xs.view(),
            self.order,
            &mut self.tape,
        );
        let n_b = self.layout.bterms.len();
        let n_r = self.layout.colloc_pt.len();

        if want_grad {
            self.seeds.value.fill(0.0);
            self.seeds.d1.fill(0.0);
            self.seeds.d2.fill(0.0);
        }

        let mut per_point = Vec::with_capacity(n_b + n_r);
        let wb = 2.0 / n_b as f64;
        for term in &self.layout.bterms {
            let r = match *term {
                BTerm::Value { pt, target } => {
                    let r = out.value[pt] - target;
                    if want_grad {
                        self.seeds.value[pt] += wb * r;
                    }
                    r
                }
                BTerm::Pair { a, b } => {
                    let r = out.value[a] - out.value[b];
                    if want_grad {
                        self.seeds.value[a] += wb * r;
                        self.seeds.value[b] -= wb * r;
                    }
                    r
                }
            };
            per_point.push(r);
        }

        let wr = 2.0 / n_r as f64;
        for (&pt, &f) in self.layout.colloc_pt.iter().zip(&self.layout.forcing) {
            let r = match self.spec {
                ProblemSpec::Poisson { .. } => out.d2[(pt, 0)] - f,
                ProblemSpec::Transport { beta } => out.d1[(pt, 1)] + beta * out.d1[(pt, 0)],
                ProblemSpec::ReactionDiffusion { nu, rho } => {
                    let u = out.value[pt];
                    out.d1[(pt, 1)] - nu * out.d2[(pt, 0)] - rho * u * (1.0 - u)
                }
            };
            if want_grad {
                let w = wr * r;
                match self.spec {
                    ProblemSpec::Poisson { .. } => self.seeds.d2[(pt, 0)] += w,
                    ProblemSpec::Transport { beta } => {
                        self.seeds.d1[(pt, 1)] += w;
                        self.seeds.d1[(pt, 0)] += w * beta;
                    }
                    ProblemSpec::ReactionDiffusion { nu, rho } => {
                        let u = out.value[pt];
                        self.seeds.d1[(pt, 1)] += w;
                        self.seeds.d2[(pt, 0)] -= w * nu;
                        self.seeds.value[pt] -= w * rho * (1.0 - 2.0 * u);
                    }
                }
            }
            per_point.push(r);
        }

        // Sorted accumulation makes the two means exactly permutation
        // invariant (and slightly more accurate).
        let boundary = mean_of_squares_sorted(&per_point[..n_b], &mut self.sort_buf);
        let residual = mean_of_squares_sorted(&per_point[n_b..], &mut self.sort_buf);
        let total = boundary + residual;
        if !total.is_finite() {
            return Err(ProblemError::NonFiniteLoss);
        }
        if let Some(grad) = grad {
            backward_accumulate(&self.cfg, params, &mut self.tape, &self.seeds, grad);
        }
        Ok(LossBreakdown {
            total,
            boundary,
            residual,
            per_point,
        })
    }
}

fn mean_of_squares_sorted(vals: &[f64], buf: &mut Vec<f64>) -> f64 {
    buf.clear();
    buf.extend(vals.iter().map(|v| v * v));
    buf.sort_by(f64::total_cmp);
    buf.iter().sum::<f64>() / vals.len() as f64
}

/// One-shot loss evaluation (builds a throwaway context).
pub fn loss(
    cfg: &MlpConfig,
    params: &MlpParams,
    spec: &ProblemSpec,
    points: &PointSet,
) -> Result<LossBreakdown, ProblemError> {
    LossContext::new(cfg, spec, points)?.loss(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::init_params;

    fn zero_net(cfg: &MlpConfig) -> MlpParams {
        let p = init_params(cfg, 0).unwrap();
        let flat = vec![0.0; cfg.param_count()];
        let mut p2 = p;
        p2.copy_from_flat(&flat);
        p2
    }

    #[test]
    fn poisson_forcing_value() {
        // C = 5 pi at x = 0.5: f = -C^2 sin(C/2) = -(5pi)^2 sin(2.5pi) = -(5pi)^2.
        let spec = ProblemSpec::poisson(5.0 * std::f64::consts::PI).unwrap();
        let f = spec.forcing(&[0.5]);
        let expect = -(5.0 * std::f64::consts::PI).powi(2);
        assert!((f - expect).abs() < 1e-9 * expect.abs(), "{f} vs {expect}");
        assert!((f - (-246.74)).abs() < 0.02);
    }

    #[test]
    fn zero_network_poisson_loss_matches_quadrature() {
        // With u == 0 the boundary term vanishes and the residual term is the
        // midpoint-rule mean of f^2 = C^4 sin^2(Cx), which for C = 5 pi over
        // [0, 1] is exactly C^4 / 2 on this grid.
        let c = 5.0 * std::f64::consts::PI;
        let spec = ProblemSpec::poisson(c).unwrap();
        let cfg = MlpConfig::new(1, vec![8]);
        let params = zero_net(&cfg);
        let pts = sample_points(&spec, 10, 1000, SamplingScheme::Equispaced, 0).unwrap();
        let lb = loss(&cfg, &params, &spec, &pts).unwrap();
        assert_eq!(lb.boundary, 0.0);
        // Independent quadrature over the same midpoint grid.
        let mut quad = 0.0;
        for i in 0..1000 {
            let x = (i as f64 + 0.5) / 1000.0;
            quad += spec.forcing(&[x]).powi(2);
        }
        quad /= 1000.0;
        assert!(
            (lb.residual - quad).abs() <= 1e-12 * quad,
            "loss {} vs quadrature {quad}",
            lb.residual
        );
        let half_c4 = c.powi(4) / 2.0;
        assert!(
            (lb.residual - half_c4).abs() < 1e-6 * half_c4,
            "residual {} vs C^4/2 = {half_c4}",
            lb.residual
        );
        assert!((lb.residual - 30440.0).abs() < 1.0);
        assert_eq!(lb.total, lb.boundary + lb.residual);
    }

    #[test]
    fn poisson_boundary_alternates_endpoints() {
        let spec = ProblemSpec::poisson(std::f64::consts::PI).unwrap();
        let pts = sample_points(&spec, 7, 5, SamplingScheme::UniformRandom, 3).unwrap();
        let xs: Vec<f64> = pts
            .boundary
            .iter()
            .map(|b| match b {
                BoundaryPoint::Dirichlet { x, .. } => x[0],
                _ => panic!("poisson has no pairs"),
            })
            .collect();
        assert_eq!(xs, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn equispaced_collocation_spacing_is_exact() {
        let spec = ProblemSpec::poisson(std::f64::consts::PI).unwrap();
        let pts = sample_points(&spec, 2, 64, SamplingScheme::Equispaced, 0).unwrap();
        let step = 1.0 / 64.0;
        for i in 0..64 {
            let x = pts.collocation[(i, 0)];
            let expect = (i as f64 + 0.5) * step;
            assert!((x - expect).abs() <= f64::EPSILON, "{x} vs {expect}");
            assert!(x > 0.0 && x < 1.0, "interior");
        }
    }

    #[test]
    fn time_dependent_split_and_pair_times() {
        let spec = ProblemSpec::transport(20.0).unwrap();
        let pts = sample_points(&spec, 9, 12, SamplingScheme::UniformRandom, 1).unwrap();
        let n_init = pts
            .boundary
            .iter()
            .filter(|b| matches!(b, BoundaryPoint::Dirichlet { .. }))
            .count();
        let n_pair = pts.boundary.len() - n_init;
        assert_eq!((n_init, n_pair), (5, 4));
        for b in &pts.boundary {
            match b {
                BoundaryPoint::Dirichlet { x, target } => {
                    assert_eq!(x[1], 0.0);
                    assert!((target - x[0].sin()).abs() < 1e-15);
                }
                BoundaryPoint::PeriodicPair { a, b } => {
                    assert_eq!(a[1], b[1], "pair times shared");
                    assert_eq!(a[0], 0.0);
                    assert_eq!(b[0], TWO_PI);
                }
            }
        }
        assert_eq!(pts.collocation.nrows(), 12);
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let spec = ProblemSpec::transport(20.0).unwrap();
        let a = sample_points(&spec, 10, 20, SamplingScheme::UniformRandom, 5).unwrap();
        let b = sample_points(&spec, 10, 20, SamplingScheme::UniformRandom, 5).unwrap();
        assert_eq!(a, b);
        let c = sample_points(&spec, 10, 20, SamplingScheme::UniformRandom, 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn loss_is_permutation_invariant_within_groups() {
        let spec = ProblemSpec::poisson(2.0 * std::f64::consts::PI).unwrap();
        let cfg = MlpConfig::new(1, vec![12]);
        let params = init_params(&cfg, 4).unwrap();
        let pts = sample_points(&spec, 8, 50, SamplingScheme::UniformRandom, 9).unwrap();
        let base = loss(&cfg, &params, &spec, &pts).unwrap();

        let mut shuffled = pts.clone();
        shuffled.boundary.reverse();
        let mut rows: Vec<Vec<f64>> = shuffled
            .collocation
            .rows()
            .into_iter()
            .map(|r| r.to_vec())
            .collect();
        rows.rotate_left(17);
        rows.swap(1, 40);
        shuffled.collocation =
            Array2::from_shape_vec((50, 1), rows.concat()).unwrap();
        let perm = loss(&cfg, &params, &spec, &shuffled).unwrap();
        assert_eq!(base.boundary, perm.boundary, "boundary term bit-stable");
        assert_eq!(base.residual, perm.residual, "residual term bit-stable");
        assert_eq!(base.total, perm.total);
    }

    #[test]
    fn exact_jet_zeroes_the_residual_terms() {
        // Feed the exact Poisson solution through the residual formula
        // directly (no network): residual must vanish identically.
        let c = 3.0 * std::f64::consts::PI;
        let spec = ProblemSpec::poisson(c).unwrap();
        for i in 0..50 {
            let x = i as f64 / 49.0;
            let jet = Jet2 {
                value: (c * x).sin(),
                d1: vec![c * (c * x).cos()],
                d2: vec![-c * c * (c * x).sin()],
            };
            assert!(spec.residual(&jet, &[x]).abs() < 1e-9);
        }
        // Same for transport with u = sin(x - beta t).
        let beta = 7.0;
        let spec = ProblemSpec::transport(beta).unwrap();
        for i in 0..50 {
            let x = TWO_PI * i as f64 / 49.0;
            let t = i as f64 / 49.0;
            let jet = Jet2 {
                value: (x - beta * t).sin(),
                d1: vec![(x - beta * t).cos(), -beta * (x - beta * t).cos()],
                d2: vec![-(x - beta * t).sin(), -beta * beta * (x - beta * t).sin()],
            };
            assert!(spec.residual(&jet, &[x, t]).abs() < 1e-9);
        }
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        for spec in [
            ProblemSpec::poisson(std::f64::consts::PI).unwrap(),
            ProblemSpec::transport(3.0).unwrap(),
            ProblemSpec::reaction_diffusion(0.7, 1.3).unwrap(),
        ] {
            let cfg = MlpConfig::new(spec.input_dim(), vec![6]);
            let params = init_params(&cfg, 21).unwrap();
            let pts = sample_points(&spec, 6, 10, SamplingScheme::UniformRandom, 2).unwrap();
            let mut ctx = LossContext::new(&cfg, &spec, &pts).unwrap();
            let mut grad = vec![0.0; cfg.param_count()];
            let _ = ctx.loss_and_grad(&params, &mut grad).unwrap();

            let flat = params.flatten();
            let h = 1e-6;
            for i in (0..flat.len()).step_by(3) {
                let mut wp = flat.clone();
                let mut wm = flat.clone();
                wp[i] += h;
                wm[i] -= h;
                let pp = MlpParams::from_flat(&cfg, &wp).unwrap();
                let pm = MlpParams::from_flat(&cfg, &wm).unwrap();
                let lp = loss(&cfg, &pp, &spec, &pts).unwrap().total;
                let lm = loss(&cfg, &pm, &spec, &pts).unwrap().total;
                let fd = (lp - lm) / (2.0 * h);
                assert!(
                    (grad[i] - fd).abs() <= 1e-5 * grad[i].abs().max(fd.abs()).max(1e-4),
                    "{spec:?} coord {i}: {} vs {fd}",
                    grad[i]
                );
            }
        }
    }

    #[test]
    fn poisson_endpoints_dedupe_to_two_rows() {
        let spec = ProblemSpec::poisson(std::f64::consts::PI).unwrap();
        let cfg = MlpConfig::new(1, vec![4]);
        let pts = sample_points(&spec, 1000, 16, SamplingScheme::Equispaced, 0).unwrap();
        let ctx = LossContext::new(&cfg, &spec, &pts).unwrap();
        assert_eq!(ctx.n_boundary(), 1000);
        // 2 unique endpoints + 16 collocation rows.
        assert_eq!(ctx.layout.n_unique(), 18);
    }

    #[test]
    fn invalid_point_sets_are_rejected() {
        let spec = ProblemSpec::transport(1.0).unwrap();
        assert!(sample_points(&spec, 0, 5, SamplingScheme::UniformRandom, 0).is_err());
        let mut pts = sample_points(&spec, 4, 5, SamplingScheme::UniformRandom, 0).unwrap();
        pts.boundary.push(BoundaryPoint::PeriodicPair {
            a: vec![0.0, 0.1],
            b: vec![TWO_PI, 0.2],
        });
        assert!(matches!(
            pts.validate(&spec),
            Err(ProblemError::BadPointSet(_))
        ));
    }

    #[test]
    fn bad_params_rejected() {
        assert!(ProblemSpec::poisson(0.0).is_err());
        assert!(ProblemSpec::poisson(f64::NAN).is_err());
        assert!(ProblemSpec::transport(-1.0).is_err());
        assert!(ProblemSpec::reaction_diffusion(1.0, f64::INFINITY).is_err());
    }
}
