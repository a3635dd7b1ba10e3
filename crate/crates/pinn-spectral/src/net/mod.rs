//! Fully-connected tanh networks with Taylor-mode jet propagation.
//!
//! A forward pass carries, per input coordinate, the value together with the
//! first and *pure* second derivative of every intermediate quantity (no mixed
//! partials), so a single evaluation yields `u`, `u_xj`, and `u_xjxj` exactly.
//! A recorded reverse sweep then produces the weight gradient of any scalar
//! observable built from those jet channels, which is what both the training
//! loss and tangent-kernel rows are made of.

mod eval;
mod hessian;

pub use eval::{backward_accumulate, backward_rows, forward_batch, JetBatch, JetTape, SeedBatch};
pub use hessian::{fd_hvp, hessian_max_eig, power_iteration, PowerIterResult};

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("invalid network config: {0}")]
    BadConfig(String),
    #[error("input has {got} coordinates, network expects {expect}")]
    DimMismatch { got: usize, expect: usize },
    #[error("non-finite input coordinate")]
    NonFiniteInput,
}

/// Weight scaling convention for the forward pass.
///
/// `Standard` draws weights with variance `2/(fan_in + fan_out)` and applies
/// no extra factor. `NtkScaled` draws unit-variance weights and multiplies
/// every linear map by `1/fan_in`, which keeps the tangent kernel's scale
/// width-independent for staticity studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Parameterization {
    #[default]
    Standard,
    NtkScaled,
}

/// Architecture of a scalar-output tanh MLP.
///
/// `hidden` lists the widths of the hidden layers; the output layer is a
/// single linear unit. Every hidden layer uses tanh.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub parameterization: Parameterization,
}

impl MlpConfig {
    pub fn new(input_dim: usize, hidden: Vec<usize>) -> Self {
        MlpConfig {
            input_dim,
            hidden,
            parameterization: Parameterization::Standard,
        }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if self.input_dim == 0 {
            return Err(NetError::BadConfig("input_dim must be >= 1".into()));
        }
        if self.hidden.is_empty() {
            return Err(NetError::BadConfig("need at least one hidden layer".into()));
        }
        if self.hidden.iter().any(|&w| w == 0) {
            return Err(NetError::BadConfig("zero-width hidden layer".into()));
        }
        Ok(())
    }

    /// `(out, in)` shape of each linear layer, hidden layers then the output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.input_dim;
        for &w in &self.hidden {
            dims.push((w, prev));
            prev = w;
        }
        dims.push((1, prev));
        dims
    }

    /// Total number of trainable scalars (weights plus biases).
    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(o, i)| o * i + o).sum()
    }

    /// Forward multiplier of layer `l`: 1 in standard mode, `1/fan_in` in
    /// ntk-scaled mode.
    pub(crate) fn layer_scale(&self, fan_in: usize) -> f64 {
        match self.parameterization {
            Parameterization::Standard => 1.0,
            Parameterization::NtkScaled => 1.0 / fan_in as f64,
        }
    }
}

/// Network parameters: one dense matrix and one bias vector per linear layer.
///
/// The flat view used by optimizers concatenates, layer by layer, the weight
/// matrix in row-major order followed by the bias vector.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl MlpParams {
    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Flattens into a single vector; inverse of [`MlpParams::from_flat`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn from_flat(config: &MlpConfig, flat: &[f64]) -> Result<Self, NetError> {
        if flat.len() != config.param_count() {
            return Err(NetError::BadConfig(format!(
                "flat vector has {} entries, config needs {}",
                flat.len(),
                config.param_count()
            )));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let mut at = 0;
        for (o, i) in config.layer_dims() {
            let w = Array2::from_shape_vec((o, i), flat[at..at + o * i].to_vec()).unwrap();
            at += o * i;
            let b = Array1::from_vec(flat[at..at + o].to_vec());
            at += o;
            weights.push(w);
            biases.push(b);
        }
        Ok(MlpParams { weights, biases })
    }

    /// Overwrites the existing storage from a flat slice without reallocating.
    pub fn copy_from_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count(), "flat length mismatch");
        let mut at = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let n = w.len();
            w.as_slice_mut()
                .unwrap()
                .copy_from_slice(&flat[at..at + n]);
            at += n;
            let n = b.len();
            b.as_slice_mut()
                .unwrap()
                .copy_from_slice(&flat[at..at + n]);
            at += n;
        }
    }
}

/// Seeded parameter draw.
///
/// Standard mode: `W ~ N(0, 2/(fan_in + fan_out))`, biases zero. Ntk-scaled
/// mode: `W ~ N(0, 1)`, biases zero (the `1/fan_in` factor lives in the
/// forward pass, not in the draw). Identical `(config, seed)` produce
/// bit-identical parameters.
pub fn init_params(config: &MlpConfig, seed: u64) -> Result<MlpParams, NetError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for (out, inp) in config.layer_dims() {
        let std = match config.parameterization {
            Parameterization::Standard => (2.0 / (inp + out) as f64).sqrt(),
            Parameterization::NtkScaled => 1.0,
        };
        let normal = Normal::new(0.0, std).expect("std is finite and positive");
        let w = Array2::from_shape_fn((out, inp), |_| normal.sample(&mut rng));
        weights.push(w);
        biases.push(Array1::zeros(out));
    }
    Ok(MlpParams { weights, biases })
}

/// Value and input derivatives of the network output at one point:
/// `d1[j] = du/dx_j`, `d2[j] = d2u/dx_j^2`. Channels beyond the requested
/// jet order are empty.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet2 {
    pub value: f64,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
}

/// Adjoint seed of a scalar observable with respect to the output jet
/// channels: `d(obs)/d(value)`, `d(obs)/d(u_xj)`, `d(obs)/d(u_xjxj)`.
#[derive(Debug, Clone)]
pub struct JetSeeds {
    pub value: f64,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
}

impl JetSeeds {
    pub fn zeros(input_dim: usize) -> Self {
        JetSeeds {
            value: 0.0,
            d1: vec![0.0; input_dim],
            d2: vec![0.0; input_dim],
        }
    }
}

/// A scalar function of the output jet, differentiable through the reverse
/// sweep. PDE residuals implement this in the problems module.
pub trait Observable {
    /// Highest input-derivative order the observable reads (0, 1, or 2).
    fn order(&self) -> usize;
    fn value(&self, jet: &Jet2, x: &[f64]) -> f64;
    /// Derivative of the observable with respect to each jet channel,
    /// evaluated at this point's jet.
    fn seeds(&self, jet: &Jet2, x: &[f64]) -> JetSeeds;
}

/// The plain jet observables: the value, one first derivative, or one pure
/// second derivative of the output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasicObservable {
    U,
    DuDx(usize),
    D2uDx2(usize),
}

impl Observable for BasicObservable {
    fn order(&self) -> usize {
        match self {
            BasicObservable::U => 0,
            BasicObservable::DuDx(_) => 1,
            BasicObservable::D2uDx2(_) => 2,
        }
    }

    fn value(&self, jet: &Jet2, _x: &[f64]) -> f64 {
        match *self {
            BasicObservable::U => jet.value,
            BasicObservable::DuDx(j) => jet.d1[j],
            BasicObservable::D2uDx2(j) => jet.d2[j],
        }
    }

    fn seeds(&self, _jet: &Jet2, x: &[f64]) -> JetSeeds {
        let mut s = JetSeeds::zeros(x.len());
        match *self {
            BasicObservable::U => s.value = 1.0,
            BasicObservable::DuDx(j) => s.d1[j] = 1.0,
            BasicObservable::D2uDx2(j) => s.d2[j] = 1.0,
        }
        s
    }
}

/// Evaluates the output jet at a single point. `order` selects how many
/// derivative channels to propagate (0 = value only, 2 = through pure second
/// derivatives).
pub fn forward_jet(
    config: &MlpConfig,
    params: &MlpParams,
    x: &[f64],
    order: usize,
) -> Result<Jet2, NetError> {
    check_point(config, x)?;
    let xs = Array2::from_shape_vec((1, x.len()), x.to_vec()).unwrap();
    let mut tape = JetTape::new();
    let out = forward_batch(config, params, xs.view(), order, &mut tape);
    Ok(out.jet(0))
}

/// Weight gradient of one observable at one point, as a flat vector aligned
/// with [`MlpParams::flatten`].
pub fn grad_of_observable(
    config: &MlpConfig,
    params: &MlpParams,
    x: &[f64],
    obs: &dyn Observable,
) -> Result<Vec<f64>, NetError> {
    check_point(config, x)?;
    let d = config.input_dim;
    let xs = Array2::from_shape_vec((1, d), x.to_vec()).unwrap();
    let mut tape = JetTape::new();
    let order = obs.order();
    let out = forward_batch(config, params, xs.view(), order, &mut tape);
    let jet = out.jet(0);
    let seeds = obs.seeds(&jet, x);
    let mut batch_seeds = SeedBatch::zeros(1, d, order);
    batch_seeds.value[0] = seeds.value;
    for j in 0..d {
        if order >= 1 {
            batch_seeds.d1[(0, j)] = seeds.d1[j];
        }
        if order >= 2 {
            batch_seeds.d2[(0, j)] = seeds.d2[j];
        }
    }
    let mut grad = vec![0.0; config.param_count()];
    backward_accumulate(config, params, &mut tape, &batch_seeds, &mut grad);
    Ok(grad)
}

fn check_point(config: &MlpConfig, x: &[f64]) -> Result<(), NetError> {
    if x.len() != config.input_dim {
        return Err(NetError::DimMismatch {
            got: x.len(),
            expect: config.input_dim,
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(NetError::NonFiniteInput);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_count_matches_hand_count() {
        // 1 -> 500 -> 1: 500 weights + 500 biases + 500 weights + 1 bias.
        let cfg = MlpConfig::new(1, vec![500]);
        assert_eq!(cfg.param_count(), 1501);
        let cfg = MlpConfig::new(2, vec![8, 8]);
        assert_eq!(cfg.param_count(), 2 * 8 + 8 + 8 * 8 + 8 + 8 + 1);
    }

    #[test]
    fn init_is_deterministic_and_bias_free() {
        let cfg = MlpConfig::new(1, vec![32]);
        let a = init_params(&cfg, 7).unwrap();
        let b = init_params(&cfg, 7).unwrap();
        assert_eq!(a.flatten(), b.flatten());
        let c = init_params(&cfg, 8).unwrap();
        assert_ne!(a.flatten(), c.flatten());
        for bias in &a.biases {
            assert!(bias.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn init_variance_tracks_fan_sizes() {
        // With fan_in 100, fan_out 100 the draw std is sqrt(2/200) = 0.1;
        // the sample std over 10_000 weights should sit within a few percent.
        let cfg = MlpConfig::new(100, vec![100]);
        let p = init_params(&cfg, 3).unwrap();
        let w = &p.weights[0];
        let n = w.len() as f64;
        let mean = w.iter().sum::<f64>() / n;
        let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let expect = 2.0 / 200.0;
        assert!(
            (var - expect).abs() < 0.1 * expect,
            "sample var {var} vs expected {expect}"
        );
    }

    #[test]
    fn flatten_roundtrip_is_exact() {
        let cfg = MlpConfig::new(2, vec![5, 3]);
        let p = init_params(&cfg, 11).unwrap();
        let flat = p.flatten();
        let q = MlpParams::from_flat(&cfg, &flat).unwrap();
        assert_eq!(p, q);
        assert_eq!(flat, q.flatten());
    }

    #[test]
    fn zero_sizes_rejected() {
        assert!(init_params(&MlpConfig::new(0, vec![4]), 0).is_err());
        assert!(init_params(&MlpConfig::new(1, vec![]), 0).is_err());
        assert!(init_params(&MlpConfig::new(1, vec![4, 0]), 0).is_err());
    }

    /// Identity-weight single unit: u(x) = tanh(x). Jet at x must reproduce
    /// tanh, 1 - tanh^2, and -2 tanh (1 - tanh^2).
    #[test]
    fn single_unit_jet_matches_tanh_closed_form() {
        let cfg = MlpConfig::new(1, vec![1]);
        let params = MlpParams {
            weights: vec![
                Array2::from_shape_vec((1, 1), vec![1.0]).unwrap(),
                Array2::from_shape_vec((1, 1), vec![1.0]).unwrap(),
            ],
            biases: vec![Array1::zeros(1), Array1::zeros(1)],
        };
        let jet = forward_jet(&cfg, &params, &[0.0], 2).unwrap();
        assert_eq!(jet.value, 0.0);
        assert!((jet.d1[0] - 1.0).abs() < 1e-15);
        assert!(jet.d2[0].abs() < 1e-15);

        let jet = forward_jet(&cfg, &params, &[1.0], 2).unwrap();
        let t = 1.0f64.tanh();
        assert!((jet.value - t).abs() < 1e-14, "value {}", jet.value);
        assert!((jet.value - 0.76159).abs() < 1e-5);
        assert!((jet.d1[0] - (1.0 - t * t)).abs() < 1e-14);
        assert!((jet.d1[0] - 0.41997).abs() < 1e-5);
        assert!((jet.d2[0] - (-2.0 * t * (1.0 - t * t))).abs() < 1e-14);
        assert!((jet.d2[0] - (-0.63970)).abs() < 1e-5);
    }

    /// Same single-unit net: d(u)/d(output weight) = tanh(x) and
    /// d(u)/d(output bias) = 1.
    #[test]
    fn single_unit_observable_gradient() {
        let cfg = MlpConfig::new(1, vec![1]);
        let params = MlpParams {
            weights: vec![
                Array2::from_shape_vec((1, 1), vec![1.0]).unwrap(),
                Array2::from_shape_vec((1, 1), vec![1.0]).unwrap(),
            ],
            biases: vec![Array1::zeros(1), Array1::zeros(1)],
        };
        let g = grad_of_observable(&cfg, &params, &[1.0], &BasicObservable::U).unwrap();
        // Flat order: w1, b1, w2, b2.
        let t = 1.0f64.tanh();
        let s1 = 1.0 - t * t;
        assert!((g[0] - s1).abs() < 1e-14, "dU/dw1 = sigma'(x) * w2 * x");
        assert!((g[1] - s1).abs() < 1e-14, "dU/db1 = sigma'(x) * w2");
        assert!((g[2] - t).abs() < 1e-14, "dU/dw2 = tanh(x)");
        assert!((g[3] - 1.0).abs() < 1e-14, "dU/db2 = 1");
    }

    #[test]
    fn dim_mismatch_and_nonfinite_rejected() {
        let cfg = MlpConfig::new(1, vec![4]);
        let p = init_params(&cfg, 0).unwrap();
        assert!(forward_jet(&cfg, &p, &[0.1, 0.2], 2).is_err());
        assert!(forward_jet(&cfg, &p, &[f64::NAN], 2).is_err());
    }
}
