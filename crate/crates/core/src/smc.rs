//! Fixed-size multilevel sequential Monte Carlo sampler.
//!
//! Level 0 is initialised from the prior by one importance-resample step
//! followed by `n_init_sweeps` applications of the move kernel. Each further
//! level resamples ancestors multinomially with mass `∝ G_θ^{s-1}` and moves
//! every particle with a reflected random-walk Metropolis kernel that leaves
//! `η_θ^s` invariant.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::cost::CostLedger;
use crate::error::{Error, Result};
use crate::model::{ModelSpec, Theta};

/// Parameters of the move kernel `M_θ^l`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelConfig {
    pub proposal_std: f64,
    /// Metropolis steps per application of the kernel.
    pub n_mcmc_steps: usize,
    /// Kernel applications after the level-0 importance resampling.
    pub n_init_sweeps: usize,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self { proposal_std: 0.2, n_mcmc_steps: 5, n_init_sweeps: 10 }
    }
}

impl KernelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.proposal_std >= 0.0 && self.proposal_std.is_finite()) {
            return Err(Error::InvalidConfig(format!("proposal_std must be non-negative, got {}", self.proposal_std)));
        }
        if self.n_mcmc_steps == 0 {
            return Err(Error::InvalidConfig("n_mcmc_steps must be at least 1".into()));
        }
        Ok(())
    }
}

/// A latent vector with its cached observations at the particle's level and,
/// once needed for the potential, at the next finer level.
#[derive(Clone, Debug, PartialEq)]
pub struct Particle {
    pub u: Vec<f64>,
    pub obs: Vec<f64>,
    pub obs_finer: Option<Vec<f64>>,
}

impl Particle {
    pub fn new(spec: &ModelSpec, u: Vec<f64>, level: usize) -> Result<Self> {
        let obs = spec.forward(&u, level)?;
        Ok(Self { u, obs, obs_finer: None })
    }

    fn ensure_finer(&mut self, spec: &ModelSpec, level: usize) -> Result<&[f64]> {
        if self.obs_finer.is_none() {
            self.obs_finer = Some(spec.forward(&self.u, level + 1)?);
        }
        Ok(self.obs_finer.as_deref().unwrap_or_default())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParticleEnsemble {
    level: usize,
    particles: Vec<Particle>,
}

impl ParticleEnsemble {
    pub fn new(level: usize, particles: Vec<Particle>) -> Self {
        Self { level, particles }
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    pub fn into_particles(self) -> Vec<Particle> {
        self.particles
    }

    /// Solve every particle at level `s + 1` (idempotent).
    pub fn ensure_finer(&mut self, spec: &ModelSpec) -> Result<()> {
        let level = self.level;
        for p in &mut self.particles {
            p.ensure_finer(spec, level)?;
        }
        Ok(())
    }

    /// `log G_θ^s(u^i)` for every particle.
    pub fn log_potentials(&mut self, spec: &ModelSpec, theta: Theta) -> Result<Vec<f64>> {
        let level = self.level;
        self.particles
            .iter_mut()
            .map(|p| {
                let finer = p.ensure_finer(spec, level)?.to_vec();
                Ok(spec.log_ratio_obs(theta, &p.obs, &finer))
            })
            .collect()
    }

    /// `η^{s,N}(φ_θ^s)`.
    pub fn mean_phi(&self, spec: &ModelSpec, theta: Theta) -> Vec<f64> {
        let mut acc = vec![0.0; spec.theta_dim()];
        for p in &self.particles {
            for (a, g) in acc.iter_mut().zip(spec.grad_obs(theta, &p.obs)) {
                *a += g;
            }
        }
        let n = self.particles.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }
}

/// Normalise log-weights with the max-subtraction trick. `None` when every
/// weight vanishes or the input is empty.
pub fn normalized_weights(log_weights: &[f64]) -> Option<Vec<f64>> {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    let w: Vec<f64> = log_weights.iter().map(|lw| (lw - max).exp()).collect();
    let total: f64 = w.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return None;
    }
    Some(w.into_iter().map(|v| v / total).collect())
}

/// `n` i.i.d. draws from the categorical law given by `weights`.
pub fn multinomial_ancestors<R: Rng + ?Sized>(weights: &[f64], n: usize, rng: &mut R) -> Vec<usize> {
    let mut cdf = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in weights {
        acc += w;
        cdf.push(acc);
    }
    let last = weights.len() - 1;
    (0..n)
        .map(|_| {
            let target = rng.random::<f64>() * acc;
            cdf.partition_point(|&c| c <= target).min(last)
        })
        .collect()
}

/// Fold `x` back into `[-1, 1]` by repeated reflection at the walls.
pub fn reflect(x: f64) -> f64 {
    if (-1.0..=1.0).contains(&x) {
        return x;
    }
    let y = (x + 1.0).rem_euclid(4.0);
    if y > 2.0 {
        3.0 - y
    } else {
        y - 1.0
    }
}

/// `n_mcmc_steps` reflected random-walk Metropolis steps targeting `η_θ^level`.
///
/// Reflection keeps the Gaussian proposal symmetric, so the acceptance
/// probability is `min(1, γ_θ^l(u') / γ_θ^l(u))`.
pub fn mcmc_move<R: Rng + ?Sized>(
    mut particle: Particle,
    spec: &ModelSpec,
    theta: Theta,
    level: usize,
    cfg: &KernelConfig,
    rng: &mut R,
) -> Result<Particle> {
    if cfg.proposal_std == 0.0 {
        return Ok(particle);
    }
    let mut log_gamma = spec.log_gamma_obs(theta, &particle.obs);
    for _ in 0..cfg.n_mcmc_steps {
        let proposal: Vec<f64> = particle
            .u
            .iter()
            .map(|&v| {
                let z: f64 = StandardNormal.sample(rng);
                reflect(v + cfg.proposal_std * z)
            })
            .collect();
        let obs = spec.forward(&proposal, level)?;
        let proposed = spec.log_gamma_obs(theta, &obs);
        let log_u = rng.random::<f64>().ln();
        if log_u < proposed - log_gamma {
            particle = Particle { u: proposal, obs, obs_finer: None };
            log_gamma = proposed;
        }
    }
    Ok(particle)
}

/// Approximate draw of `N` particles from `η_θ^0`.
pub fn init_level0<R: Rng + ?Sized>(
    spec: &ModelSpec,
    theta: Theta,
    n: usize,
    cfg: &KernelConfig,
    rng: &mut R,
) -> Result<ParticleEnsemble> {
    if n == 0 {
        return Err(Error::InvalidConfig("ensemble size must be at least 1".into()));
    }
    let k = spec.latent_dim();
    let prior: Vec<Particle> = (0..n)
        .map(|_| {
            let u: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..=1.0)).collect();
            Particle::new(spec, u, 0)
        })
        .collect::<Result<_>>()?;
    let log_w: Vec<f64> = prior.iter().map(|p| spec.log_gamma_obs(theta, &p.obs)).collect();
    let weights = normalized_weights(&log_w).ok_or(Error::DegenerateInitialization)?;
    let ancestors = multinomial_ancestors(&weights, n, rng);
    let mut particles: Vec<Particle> = ancestors.into_iter().map(|a| prior[a].clone()).collect();
    for _ in 0..cfg.n_init_sweeps {
        particles = particles
            .into_iter()
            .map(|p| mcmc_move(p, spec, theta, 0, cfg, rng))
            .collect::<Result<_>>()?;
    }
    Ok(ParticleEnsemble::new(0, particles))
}

/// One resample-move step from level `s - 1` to level `s`.
pub fn advance<R: Rng + ?Sized>(
    mut ensemble: ParticleEnsemble,
    spec: &ModelSpec,
    theta: Theta,
    cfg: &KernelConfig,
    rng: &mut R,
) -> Result<ParticleEnsemble> {
    let from = ensemble.level;
    let log_g = ensemble.log_potentials(spec, theta)?;
    let weights = normalized_weights(&log_g).ok_or(Error::WeightDegeneracy { level: from })?;
    let ancestors = multinomial_ancestors(&weights, ensemble.len(), rng);
    let to = from + 1;
    let particles = ancestors
        .into_iter()
        .map(|a| {
            let parent = &ensemble.particles[a];
            // the parent's finer observations are exactly G^{s}(u)
            let child = Particle {
                u: parent.u.clone(),
                obs: parent.obs_finer.clone().unwrap_or_default(),
                obs_finer: None,
            };
            mcmc_move(child, spec, theta, to, cfg, rng)
        })
        .collect::<Result<_>>()?;
    Ok(ParticleEnsemble::new(to, particles))
}

/// Work charged for running one particle through levels `0..=(l-1)∨0`: each
/// level `s` costs `h_s^{-1} + h_{s+1}^{-1}` when potentials are needed
/// (`l ≥ 1`), and `h_0^{-1}` for `l = 0`.
pub fn charge_run(spec: &ModelSpec, n: usize, target_level: usize, ledger: &mut CostLedger) -> Result<()> {
    let n = n as u64;
    if target_level == 0 {
        ledger.charge(spec.mesh_level(0)?.index(), n);
        return Ok(());
    }
    for s in 0..target_level {
        ledger.charge(spec.mesh_level(s)?.index(), n);
        ledger.charge(spec.mesh_level(s + 1)?.index(), n);
    }
    Ok(())
}

fn run<R: Rng + ?Sized>(
    spec: &ModelSpec,
    theta: Theta,
    n: usize,
    target_level: usize,
    cfg: &KernelConfig,
    rng: &mut R,
    ledger: &mut CostLedger,
    mut keep: Option<&mut Vec<ParticleEnsemble>>,
) -> Result<ParticleEnsemble> {
    cfg.validate()?;
    spec.mesh_level(target_level)?;
    let last = target_level.saturating_sub(1);
    let mut ens = init_level0(spec, theta, n, cfg, rng)?;
    for _ in 0..last {
        if let Some(k) = keep.as_deref_mut() {
            ens.ensure_finer(spec)?;
            k.push(ens.clone());
        }
        ens = advance(ens, spec, theta, cfg, rng)?;
    }
    if target_level >= 1 {
        ens.ensure_finer(spec)?;
    }
    charge_run(spec, n, target_level, ledger)?;
    Ok(ens)
}

/// Ensembles at levels `0, …, (l-1)∨0` targeting `η_θ^s`.
pub fn run_mlsmc<R: Rng + ?Sized>(
    spec: &ModelSpec,
    theta: Theta,
    n: usize,
    target_level: usize,
    cfg: &KernelConfig,
    rng: &mut R,
    ledger: &mut CostLedger,
) -> Result<Vec<ParticleEnsemble>> {
    let mut all = Vec::new();
    let last = run(spec, theta, n, target_level, cfg, rng, ledger, Some(&mut all))?;
    all.push(last);
    Ok(all)
}

/// Like [`run_mlsmc`] but only returns the final ensemble, with potentials
/// cached when `target_level ≥ 1`.
pub fn run_mlsmc_final<R: Rng + ?Sized>(
    spec: &ModelSpec,
    theta: Theta,
    n: usize,
    target_level: usize,
    cfg: &KernelConfig,
    rng: &mut R,
    ledger: &mut CostLedger,
) -> Result<ParticleEnsemble> {
    run(spec, theta, n, target_level, cfg, rng, ledger, None)
}

/// Coupled increment estimate from a level-`(l-1)` ensemble:
/// `η^{l-1,N}(G φ^l)/η^{l-1,N}(G) - η^{l-1,N}(φ^{l-1})`.
pub fn increment_estimate(ens: &mut ParticleEnsemble, spec: &ModelSpec, theta: Theta) -> Result<Vec<f64>> {
    let log_g = ens.log_potentials(spec, theta)?;
    let w = normalized_weights(&log_g).ok_or(Error::WeightDegeneracy { level: ens.level })?;
    let d = spec.theta_dim();
    let mut ratio = vec![0.0; d];
    let mut coarse = vec![0.0; d];
    let n = ens.len() as f64;
    for (p, wi) in ens.particles.iter().zip(&w) {
        let fine = spec.grad_obs(theta, p.obs_finer.as_deref().unwrap_or_default());
        let lo = spec.grad_obs(theta, &p.obs);
        for j in 0..d {
            ratio[j] += wi * fine[j];
            coarse[j] += lo[j] / n;
        }
    }
    Ok(ratio.iter().zip(&coarse).map(|(a, b)| a - b).collect())
}
