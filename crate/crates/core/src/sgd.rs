//! Stochastic gradient iterations on `ξ = log θ`.
//!
//! With `η̂_k` an estimate of `∇_θ log p(y | θ)` at `θ_k = e^{ξ_k}`, the
//! chain rule gives `∇_ξ = η̂_k θ_k`, and the iterate is
//! `ξ_{k+1} = ξ_k ± α_k η̂_k θ_k`.

use crate::debias::{estimate_gradient, mlsmc_baseline_estimate, Allocation};
use crate::error::{Error, Result};
use crate::model::{ModelSpec, Theta};
use crate::oracle::ToyClosedForm;
use crate::rng::derive_seed;
use crate::schedule::RandomizationSchedule;
use crate::smc::KernelConfig;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepSchedule {
    /// `α_k = α_1 / k`.
    Harmonic { alpha1: f64 },
    Constant { alpha: f64 },
}

impl StepSchedule {
    pub fn alpha(&self, k: usize) -> f64 {
        match *self {
            StepSchedule::Harmonic { alpha1 } => alpha1 / k as f64,
            StepSchedule::Constant { alpha } => alpha,
        }
    }

    fn base(&self) -> f64 {
        match *self {
            StepSchedule::Harmonic { alpha1 } => alpha1,
            StepSchedule::Constant { alpha } => alpha,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SignConvention {
    /// `ξ_{k+1} = ξ_k + α_k η̂_k θ_k`, climbing the log-likelihood.
    #[default]
    AscentOnLogLik,
    /// `ξ_{k+1} = ξ_k - α_k η̂_k θ_k`.
    PaperVerbatim,
}

impl SignConvention {
    fn factor(self) -> f64 {
        match self {
            SignConvention::AscentOnLogLik => 1.0,
            SignConvention::PaperVerbatim => -1.0,
        }
    }
}

pub const EARLY_STOP_THRESHOLD: f64 = 1e-8;
pub const EARLY_STOP_WINDOW: usize = 50;

#[derive(Clone, Debug, PartialEq)]
pub struct SgdConfig {
    pub xi_init: f64,
    pub step: StepSchedule,
    pub iterations: usize,
    /// Single-term replicates averaged per gradient.
    pub replicates: usize,
    pub schedule: RandomizationSchedule,
    pub kernel: KernelConfig,
    pub sign: SignConvention,
    /// Stop after `|step| < 1e-8` for 50 consecutive iterations.
    pub early_stop: bool,
    /// Stop once the cumulative cost reaches this many units.
    pub cost_budget: Option<u64>,
}

impl SgdConfig {
    pub fn new(xi_init: f64, step: StepSchedule, iterations: usize, schedule: RandomizationSchedule) -> Self {
        Self {
            xi_init,
            step,
            iterations,
            replicates: 1,
            schedule,
            kernel: KernelConfig::default(),
            sign: SignConvention::default(),
            early_stop: false,
            cost_budget: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.xi_init.is_finite() {
            return Err(Error::InvalidConfig(format!("sgd.xi_init must be finite, got {}", self.xi_init)));
        }
        let a = self.step.base();
        if !(a >= 0.0 && a.is_finite()) {
            return Err(Error::InvalidConfig(format!("sgd step size must be non-negative, got {a}")));
        }
        if self.replicates == 0 {
            return Err(Error::InvalidConfig("sgd.replicates must be at least 1".into()));
        }
        self.kernel.validate()
    }
}

/// State after iteration `k`; iteration 0 is the starting point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdStep {
    pub iteration: usize,
    pub xi: f64,
    pub theta: f64,
    /// Signed change `ξ_k - ξ_{k-1}`.
    pub step: f64,
    /// Gradient estimate used to produce this iterate.
    pub gradient: f64,
    pub incremental_cost: u64,
    pub cumulative_cost: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SgdTrace {
    pub steps: Vec<SgdStep>,
    /// Ended before the iteration limit (quiet window or cost budget).
    pub stopped_early: bool,
}

impl SgdTrace {
    pub fn last(&self) -> &SgdStep {
        self.steps.last().expect("trace holds the starting point")
    }

    pub fn total_cost(&self) -> u64 {
        self.last().cumulative_cost
    }
}

/// Source of `∇_θ log p(y | θ)` estimates and their cost.
pub trait GradientOracle {
    /// Estimate at `theta` for iteration `k`, drawing randomness from `seed`.
    fn gradient(&self, theta: Theta, seed: u64) -> Result<(f64, u64)>;
}

/// The doubly randomised estimator averaged over `replicates` draws.
pub struct UnbiasedOracle<'a> {
    pub spec: &'a ModelSpec,
    pub schedule: &'a RandomizationSchedule,
    pub kernel: &'a KernelConfig,
    pub replicates: usize,
}

impl GradientOracle for UnbiasedOracle<'_> {
    fn gradient(&self, theta: Theta, seed: u64) -> Result<(f64, u64)> {
        let est = estimate_gradient(self.spec, theta, self.replicates, self.schedule, self.kernel, seed)?;
        Ok((est.value[0], est.cost_units()))
    }
}

/// The biased MLSMC estimator truncated at `max_level`.
pub struct MlsmcOracle<'a> {
    pub spec: &'a ModelSpec,
    pub max_level: usize,
    pub allocation: &'a Allocation,
    pub kernel: &'a KernelConfig,
}

impl GradientOracle for MlsmcOracle<'_> {
    fn gradient(&self, theta: Theta, seed: u64) -> Result<(f64, u64)> {
        let est = mlsmc_baseline_estimate(self.spec, theta, self.max_level, self.allocation, self.kernel, seed)?;
        Ok((est.value[0], est.cost_units()))
    }
}

/// Closed-form toy gradient at zero cost.
pub struct ExactToyOracle<'a>(pub &'a ToyClosedForm);

impl GradientOracle for ExactToyOracle<'_> {
    fn gradient(&self, theta: Theta, _seed: u64) -> Result<(f64, u64)> {
        Ok((self.0.grad_log_marginal(theta)?, 0))
    }
}

/// Iterate with an arbitrary gradient source. Iteration `k` uses the seed
/// derived from `(seed, k)`.
pub fn run_sgd_with<O: GradientOracle + ?Sized>(oracle: &O, cfg: &SgdConfig, seed: u64) -> Result<SgdTrace> {
    cfg.validate()?;
    let mut xi = cfg.xi_init;
    let theta0 = Theta::from_log(xi).map_err(|_| Error::Divergence { iteration: 0 })?;
    let mut steps = Vec::with_capacity(cfg.iterations + 1);
    steps.push(SgdStep {
        iteration: 0,
        xi,
        theta: theta0.value(),
        step: 0.0,
        gradient: f64::NAN,
        incremental_cost: 0,
        cumulative_cost: 0,
    });
    let mut cumulative = 0u64;
    let mut quiet = 0usize;
    for k in 1..=cfg.iterations {
        let theta = Theta::from_log(xi).map_err(|_| Error::Divergence { iteration: k })?;
        let (grad, cost) = oracle.gradient(theta, derive_seed(seed, &[k as u64]))?;
        let step = cfg.sign.factor() * cfg.step.alpha(k) * grad * theta.value();
        xi += step;
        let theta_next = xi.exp();
        if !(xi.is_finite() && theta_next.is_finite() && theta_next > 0.0) {
            return Err(Error::Divergence { iteration: k });
        }
        cumulative += cost;
        steps.push(SgdStep {
            iteration: k,
            xi,
            theta: theta_next,
            step,
            gradient: grad,
            incremental_cost: cost,
            cumulative_cost: cumulative,
        });
        quiet = if step.abs() < EARLY_STOP_THRESHOLD { quiet + 1 } else { 0 };
        let over_budget = cfg.cost_budget.is_some_and(|b| cumulative >= b);
        if (cfg.early_stop && quiet >= EARLY_STOP_WINDOW) || over_budget {
            return Ok(SgdTrace { steps, stopped_early: true });
        }
    }
    Ok(SgdTrace { steps, stopped_early: false })
}

pub fn run_sgd(spec: &ModelSpec, cfg: &SgdConfig, seed: u64) -> Result<SgdTrace> {
    let oracle =
        UnbiasedOracle { spec, schedule: &cfg.schedule, kernel: &cfg.kernel, replicates: cfg.replicates };
    run_sgd_with(&oracle, cfg, seed)
}

pub fn run_sgd_with_mlsmc(
    spec: &ModelSpec,
    cfg: &SgdConfig,
    max_level: usize,
    allocation: &Allocation,
    seed: u64,
) -> Result<SgdTrace> {
    let oracle = MlsmcOracle { spec, max_level, allocation, kernel: &cfg.kernel };
    run_sgd_with(&oracle, cfg, seed)
}
