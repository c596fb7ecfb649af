//! Unnormalised densities and gradient integrands of the inverse problem.
//!
//! With data `y = G(u) + ξ`, `ξ ~ N(0, θ^{-1} I_M)` and a uniform prior on
//! `u ∈ [-1, 1]^K`, the level-`l` quantities are
//!
//! ```text
//! log γ_θ^l(u) = (M/2) log θ - (θ/2) ‖G^l(u) - y‖²
//! φ_θ^l(u)     = M/(2θ) - ‖G^l(u) - y‖²/2
//! log G_θ^l(u) = log γ_θ^{l+1}(u) - log γ_θ^l(u)
//! ```
//!
//! The toy variant also carries a log-normal prior on `θ`, contributing
//! `-log θ - (log θ)²/(2σ²)` to `log γ` and its derivative to `φ`.

use std::sync::{Arc, OnceLock};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::pde::{AffineForcing, ForwardModel, LevelOperator, MeshLevel, MAX_MESH_LEVEL};

/// Reference values of the two shipped examples.
pub mod defaults {
    /// Mesh level added to every schedule level.
    pub const LEVEL_OFFSET: u32 = 2;
    /// Mesh level used to synthesise observations.
    pub const TRUTH_MESH_LEVEL: u32 = 12;
    pub const DATA_SEED: u64 = 1;

    pub const GENERAL_MEAN: f64 = 0.15;
    pub const GENERAL_LATENT_DIM: usize = 2;
    pub const GENERAL_FORCING_SLOPE: f64 = 100.0;
    pub const GENERAL_POINTS: [f64; 2] = [0.25, 0.75];
    pub const GENERAL_THETA: f64 = 0.3;
    pub const GENERAL_U_TRUE: [f64; 2] = [0.5, -0.3];

    pub const TOY_OBS_COUNT: usize = 50;
    pub const TOY_THETA: f64 = 2.0;
    pub const TOY_U_TRUE: f64 = 0.5;
    pub const TOY_PRIOR_SIGMA: f64 = 1.0;

    /// `σ_k = (2/5) 4^{-k}`.
    pub fn general_amplitudes(k: usize) -> Vec<f64> {
        (1..=k).map(|i| 0.4 * 4f64.powi(-(i as i32))).collect()
    }

    /// `x_i = i / (M + 1)`.
    pub fn toy_points(m: usize) -> Vec<f64> {
        (1..=m).map(|i| i as f64 / (m as f64 + 1.0)).collect()
    }
}

/// Positive precision parameter `θ`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct Theta(f64);

impl Theta {
    pub fn new(value: f64) -> Result<Self> {
        if value > 0.0 && value.is_finite() {
            Ok(Self(value))
        } else {
            Err(Error::InvalidTheta(value))
        }
    }

    /// `θ = exp(ξ)`.
    pub fn from_log(xi: f64) -> Result<Self> {
        Self::new(xi.exp())
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn ln(self) -> f64 {
        self.0.ln()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Variant {
    /// Elliptic example: likelihood only.
    General,
    /// Poisson toy with a log-normal prior of log-standard-deviation `prior_sigma` on `θ`.
    Toy { prior_sigma: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ObservationNoise {
    /// Gaussian noise with the given precision.
    Precision(f64),
    Noiseless,
}

#[derive(Clone, Debug)]
pub struct ModelSpec {
    variant: Variant,
    forward: ForwardModel,
    points: Vec<f64>,
    y: Vec<f64>,
    level_offset: u32,
    operators: Arc<Vec<OnceLock<LevelOperator>>>,
}

impl ModelSpec {
    pub fn new(variant: Variant, forward: ForwardModel, points: Vec<f64>, y: Vec<f64>, level_offset: u32) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidConfig("at least one observation point is required".into()));
        }
        if let Some(&x) = points.iter().find(|&&x| !(x > 0.0 && x < 1.0)) {
            return Err(Error::OutsideDomain { x });
        }
        if y.len() != points.len() {
            return Err(Error::DimensionMismatch { what: "observations", got: y.len(), expected: points.len() });
        }
        if let Variant::Toy { prior_sigma } = variant {
            if !(prior_sigma > 0.0 && prior_sigma.is_finite()) {
                return Err(Error::InvalidConfig(format!("toy prior sigma must be positive, got {prior_sigma}")));
            }
            if forward.latent_dim() != 1 {
                return Err(Error::InvalidConfig("toy variant has a scalar latent".into()));
            }
        }
        if let ForwardModel::Elliptic { mean, amplitudes, .. } = &forward {
            let bound = mean - amplitudes.iter().map(|s| s.abs()).sum::<f64>();
            if bound <= 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "coefficient is not uniformly positive over the prior box (ū - Σσ_k = {bound})"
                )));
            }
        }
        let operators = Arc::new((0..=MAX_MESH_LEVEL).map(|_| OnceLock::new()).collect());
        Ok(Self { variant, forward, points, y, level_offset, operators })
    }

    /// Elliptic example on `[0, 1]` with `K` modes, `ū = 0.15`, `f = 100x`,
    /// observed at `x = 0.25, 0.75`.
    pub fn general(latent_dim: usize, y: Vec<f64>) -> Result<Self> {
        let forward = ForwardModel::Elliptic {
            mean: defaults::GENERAL_MEAN,
            amplitudes: defaults::general_amplitudes(latent_dim),
            forcing: AffineForcing::new(0.0, defaults::GENERAL_FORCING_SLOPE),
        };
        Self::new(Variant::General, forward, defaults::GENERAL_POINTS.to_vec(), y, defaults::LEVEL_OFFSET)
    }

    /// Poisson toy observed at `x_i = i/(M+1)`.
    pub fn toy(obs_count: usize, y: Vec<f64>, prior_sigma: f64) -> Result<Self> {
        Self::new(
            Variant::Toy { prior_sigma },
            ForwardModel::Poisson,
            defaults::toy_points(obs_count),
            y,
            defaults::LEVEL_OFFSET,
        )
    }

    /// The elliptic example with data synthesised from the reference truth.
    pub fn general_example() -> Result<Self> {
        let spec = Self::general(defaults::GENERAL_LATENT_DIM, vec![0.0; 2])?;
        let y = generate_data(
            &spec,
            &defaults::GENERAL_U_TRUE,
            ObservationNoise::Precision(defaults::GENERAL_THETA),
            defaults::TRUTH_MESH_LEVEL,
            defaults::DATA_SEED,
        )?;
        spec.with_data(y)
    }

    /// The toy example (`M = 50`, `θ* = 2`) with synthesised data.
    pub fn toy_example() -> Result<Self> {
        let m = defaults::TOY_OBS_COUNT;
        let spec = Self::toy(m, vec![0.0; m], defaults::TOY_PRIOR_SIGMA)?;
        let y = generate_data(
            &spec,
            &[defaults::TOY_U_TRUE],
            ObservationNoise::Precision(defaults::TOY_THETA),
            defaults::TRUTH_MESH_LEVEL,
            defaults::DATA_SEED,
        )?;
        spec.with_data(y)
    }

    pub fn with_data(&self, y: Vec<f64>) -> Result<Self> {
        if y.len() != self.points.len() {
            return Err(Error::DimensionMismatch { what: "observations", got: y.len(), expected: self.points.len() });
        }
        Ok(Self { y, ..self.clone() })
    }

    pub fn with_level_offset(&self, level_offset: u32) -> Self {
        Self { level_offset, ..self.clone() }
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn forward_model(&self) -> &ForwardModel {
        &self.forward
    }

    pub fn latent_dim(&self) -> usize {
        self.forward.latent_dim()
    }

    /// Dimension of `θ`; both shipped models have a scalar precision.
    pub fn theta_dim(&self) -> usize {
        1
    }

    pub fn obs_count(&self) -> usize {
        self.points.len()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn level_offset(&self) -> u32 {
        self.level_offset
    }

    /// Mesh level solved for schedule level `level`.
    pub fn mesh_level(&self, level: usize) -> Result<MeshLevel> {
        let l = u32::try_from(level).unwrap_or(u32::MAX).saturating_add(self.level_offset);
        MeshLevel::new(l)
    }

    fn operator(&self, mesh: MeshLevel) -> &LevelOperator {
        self.operators[mesh.index() as usize].get_or_init(|| {
            // points were validated in `new`, so construction cannot fail
            LevelOperator::new(&self.forward, mesh, &self.points).expect("validated observation points")
        })
    }

    /// `G^l(u)` at schedule level `level`.
    pub fn forward(&self, u: &[f64], level: usize) -> Result<Vec<f64>> {
        self.forward_mesh(u, self.mesh_level(level)?)
    }

    pub fn forward_mesh(&self, u: &[f64], mesh: MeshLevel) -> Result<Vec<f64>> {
        self.operator(mesh).observe(u)
    }

    /// `‖obs - y‖²`.
    pub fn misfit(&self, obs: &[f64]) -> f64 {
        obs.iter().zip(&self.y).map(|(g, y)| (g - y) * (g - y)).sum()
    }

    fn theta_prior_log(&self, theta: Theta) -> f64 {
        match self.variant {
            Variant::General => 0.0,
            Variant::Toy { prior_sigma } => {
                let lt = theta.ln();
                -lt - lt * lt / (2.0 * prior_sigma * prior_sigma)
            }
        }
    }

    fn theta_prior_grad(&self, theta: Theta) -> f64 {
        match self.variant {
            Variant::General => 0.0,
            Variant::Toy { prior_sigma } => {
                let t = theta.value();
                -1.0 / t - theta.ln() / (prior_sigma * prior_sigma * t)
            }
        }
    }

    /// `log γ_θ` given precomputed observations `G^l(u)`.
    pub fn log_gamma_obs(&self, theta: Theta, obs: &[f64]) -> f64 {
        let m = self.obs_count() as f64;
        0.5 * m * theta.ln() - 0.5 * theta.value() * self.misfit(obs) + self.theta_prior_log(theta)
    }

    /// `φ_θ = ∇_θ log γ_θ` given precomputed observations.
    pub fn grad_obs(&self, theta: Theta, obs: &[f64]) -> Vec<f64> {
        let m = self.obs_count() as f64;
        vec![0.5 * m / theta.value() - 0.5 * self.misfit(obs) + self.theta_prior_grad(theta)]
    }

    /// `log G_θ^l` from observations at levels `l` and `l + 1`; the θ-prior cancels.
    pub fn log_ratio_obs(&self, theta: Theta, obs: &[f64], obs_finer: &[f64]) -> f64 {
        -0.5 * theta.value() * (self.misfit(obs_finer) - self.misfit(obs))
    }

    pub fn log_gamma(&self, theta: Theta, u: &[f64], level: usize) -> Result<f64> {
        Ok(self.log_gamma_obs(theta, &self.forward(u, level)?))
    }

    pub fn grad_log_gamma(&self, theta: Theta, u: &[f64], level: usize) -> Result<Vec<f64>> {
        Ok(self.grad_obs(theta, &self.forward(u, level)?))
    }

    pub fn log_level_ratio(&self, theta: Theta, u: &[f64], level: usize) -> Result<f64> {
        Ok(self.log_ratio_obs(theta, &self.forward(u, level)?, &self.forward(u, level + 1)?))
    }

    pub fn in_prior_box(&self, u: &[f64]) -> bool {
        u.len() == self.latent_dim() && u.iter().all(|v| (-1.0..=1.0).contains(v))
    }

    /// Log-density of the uniform prior on `[-1, 1]^K`; `-∞` outside the box.
    pub fn log_prior_density_u(&self, u: &[f64]) -> f64 {
        if self.in_prior_box(u) {
            -(self.latent_dim() as f64) * std::f64::consts::LN_2
        } else {
            f64::NEG_INFINITY
        }
    }
}

/// Synthesise `y = G^{truth}(u_true) + ξ` with a seeded Gaussian `ξ`.
pub fn generate_data(
    spec: &ModelSpec,
    u_true: &[f64],
    noise: ObservationNoise,
    truth_mesh_level: u32,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut obs = spec.forward_mesh(u_true, MeshLevel::new(truth_mesh_level)?)?;
    if let ObservationNoise::Precision(theta) = noise {
        let sd = 1.0 / Theta::new(theta)?.value().sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in &mut obs {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += sd * z;
        }
    }
    Ok(obs)
}
