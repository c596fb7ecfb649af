//! Unbiased estimation of the gradient of the log-likelihood in PDE-constrained
//! Bayesian inverse problems.
//!
//! The crate is organised bottom-up:
//!
//! - [`pde`]: 1D piecewise-linear finite elements with a Thomas solve.
//! - [`model`]: unnormalised densities `γ_θ^l`, the gradient integrand `φ_θ^l`
//!   and the level-ratio potentials `G_θ^l` for the elliptic example and the
//!   toy Poisson model.
//! - [`smc`]: the fixed-size multilevel SMC sampler (multinomial resampling
//!   plus a reflected random-walk Metropolis move).
//! - [`schedule`] and [`debias`]: the double randomisation over the level `L`
//!   and the sample ladder depth `P`, and the biased MLSMC baseline.
//! - [`sgd`]: stochastic gradient iterations on `ξ = log θ`.
//! - [`oracle`]: closed-form toy marginal likelihood and tensor quadrature
//!   references.
//!
//! Levels passed to [`model`] and above are *schedule* levels; the model adds
//! its `level_offset` (2 by default) to obtain the mesh level, so schedule
//! level 0 is solved on a mesh of width `1/4`.

#![forbid(unsafe_code)]

pub mod cost;
pub mod debias;
pub mod error;
pub mod model;
pub mod oracle;
pub mod pde;
pub mod quadrature;
pub mod rng;
pub mod schedule;
pub mod sgd;
pub mod smc;

pub use cost::CostLedger;
pub use debias::{estimate_gradient, mlsmc_baseline_estimate, Allocation, GradientEstimate};
pub use error::{Error, Result};
pub use model::{ModelSpec, Theta};
pub use schedule::{PpRule, RandomizationSchedule};
pub use smc::KernelConfig;
