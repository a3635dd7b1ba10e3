//! Training and spectral diagnostics for physics-informed networks on 1-D PDE
//! benchmarks.
//!
//! The library trains small fully-connected tanh networks to satisfy a PDE
//! residual plus boundary/initial data (Poisson, advection transport,
//! reaction-diffusion), contrasts plain gradient descent, heavy-ball momentum
//! and Adam, and instruments training with neural-tangent-kernel diagnostics:
//! block kernel assembly, eigenmode damping classification, linearized
//! dynamics simulation, and Hessian scaling probes.
//!
//! Module map:
//! - [`net`]: tanh MLPs with Taylor-mode forward jets (value, first and pure
//!   second input derivatives) and exact reverse-mode weight gradients of any
//!   jet observable, plus Hessian power iteration.
//! - [`problems`]: the three PDE benchmarks, point sampling, the composite
//!   boundary + residual loss, exact/reference solutions (including the
//!   split-step reaction-diffusion oracle and its on-disk cache).
//! - [`optim`]: SGD, heavy-ball SGDM, Adam; the physical-parameter mapping to
//!   momentum coefficients; stability and gradient-statistics diagnostics.
//! - [`ntk`]: tangent-kernel assembly at a fixed probe point set, Jacobi
//!   eigendecomposition, damping regime classification, kernel drift, and
//!   residual projections.
//! - [`lindyn`]: closed-form damped-oscillator mode solutions, RK4 gradient
//!   flow, and the discrete momentum recurrence, for comparing predicted and
//!   observed per-mode error decay.
//! - [`harness`]: experiment configs, the training loop with its record
//!   stream, width sweeps, Hessian scaling scans, and the comparison table.
//! - [`gridfile`]: the small binary grid container used for cached
//!   reaction-diffusion references and kernel dumps.

pub mod gridfile;
pub mod harness;
pub mod lindyn;
pub mod net;
pub mod ntk;
pub mod optim;
pub mod problems;
