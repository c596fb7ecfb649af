//! TOML experiment configuration.
//!
//! Every key has a default, so an empty file is a valid `estimate` run on
//! the toy model. Unknown keys are rejected.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use ubgrad::model::{defaults, generate_data, ObservationNoise};
use ubgrad::schedule::DEFAULT_LEVEL_CAP;
use ubgrad::sgd::{SignConvention, StepSchedule};
use ubgrad::{Allocation, KernelConfig, ModelSpec, PpRule, RandomizationSchedule};

use crate::error::{HarnessError, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    #[default]
    Estimate,
    Mse,
    Sgd,
    Oracle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    /// Independent replicates per variant (`mse`, `sgd`).
    pub replicates: usize,
    pub output: Option<String>,
    pub model: ModelConfig,
    pub schedule: ScheduleConfig,
    pub kernel: KernelSection,
    pub estimate: EstimateConfig,
    pub mse: MseConfig,
    pub sgd: SgdSection,
    pub oracle: OracleConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::Estimate,
            seed: 0,
            replicates: 50,
            output: None,
            model: ModelConfig::default(),
            schedule: ScheduleConfig::default(),
            kernel: KernelSection::default(),
            estimate: EstimateConfig::default(),
            mse: MseConfig::default(),
            sgd: SgdSection::default(),
            oracle: OracleConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Example {
    #[default]
    Toy,
    General,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub example: Example,
    /// Toy: number of observation points.
    pub obs_count: usize,
    /// General: number of coefficient modes `K`.
    pub latent_dim: usize,
    /// Toy: standard deviation of the log-normal prior on `θ`.
    pub prior_sigma: f64,
    /// Data-generating precision; defaults to 2 (toy) or 0.3 (general).
    pub theta_true: Option<f64>,
    /// Data-generating latent; defaults to the shipped reference truth.
    pub u_true: Option<Vec<f64>>,
    /// Explicit observations, bypassing synthesis.
    pub y: Option<Vec<f64>>,
    pub level_offset: u32,
    pub truth_mesh_level: u32,
    pub data_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            example: Example::Toy,
            obs_count: defaults::TOY_OBS_COUNT,
            latent_dim: defaults::GENERAL_LATENT_DIM,
            prior_sigma: defaults::TOY_PRIOR_SIGMA,
            theta_true: None,
            u_true: None,
            y: None,
            level_offset: defaults::LEVEL_OFFSET,
            truth_mesh_level: defaults::TRUTH_MESH_LEVEL,
            data_seed: defaults::DATA_SEED,
        }
    }
}

impl ModelConfig {
    pub fn theta_true(&self) -> f64 {
        self.theta_true.unwrap_or(match self.example {
            Example::Toy => defaults::TOY_THETA,
            Example::General => defaults::GENERAL_THETA,
        })
    }

    fn u_true(&self) -> Result<Vec<f64>> {
        if let Some(u) = &self.u_true {
            return Ok(u.clone());
        }
        match self.example {
            Example::Toy => Ok(vec![defaults::TOY_U_TRUE]),
            Example::General if self.latent_dim == defaults::GENERAL_LATENT_DIM => Ok(defaults::GENERAL_U_TRUE.to_vec()),
            Example::General => Err(HarnessError::config("model.u_true", "required when model.latent_dim differs from 2")),
        }
    }

    pub fn build(&self) -> Result<ModelSpec> {
        let base = match self.example {
            Example::Toy => ModelSpec::toy(self.obs_count, vec![0.0; self.obs_count], self.prior_sigma),
            Example::General => ModelSpec::general(self.latent_dim, vec![0.0; defaults::GENERAL_POINTS.len()]),
        }
        .map_err(|e| HarnessError::config("model", e.to_string()))?;
        let y = match &self.y {
            Some(y) => y.clone(),
            None => generate_data(
                &base,
                &self.u_true()?,
                ObservationNoise::Precision(self.theta_true()),
                self.truth_mesh_level,
                self.data_seed,
            )
            .map_err(|e| HarnessError::config("model", e.to_string()))?,
        };
        Ok(base.with_data(y).map_err(|e| HarnessError::config("model.y", e.to_string()))?.with_level_offset(self.level_offset))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PpRuleName {
    #[default]
    Piecewise,
    Theory,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    /// `ℙ_L(l) ∝ 2^{-pl_rate·l}`.
    pub pl_rate: f64,
    /// Truncate `ℙ_L` to `0..=l_max` when set.
    pub l_max: Option<usize>,
    pub level_cap: usize,
    pub p_max: usize,
    pub pp_rule: PpRuleName,
    /// `N_p = np_base · 2^p`.
    pub np_base: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { pl_rate: 2.5, l_max: None, level_cap: DEFAULT_LEVEL_CAP, p_max: 2, pp_rule: PpRuleName::Piecewise, np_base: 8 }
    }
}

impl ScheduleConfig {
    pub fn build(&self, p_max: usize) -> Result<RandomizationSchedule> {
        let rule = match self.pp_rule {
            PpRuleName::Piecewise => PpRule::Piecewise,
            PpRuleName::Theory => PpRule::Theory,
        };
        RandomizationSchedule::new(self.pl_rate, self.l_max, p_max, rule, self.np_base)
            .map(|s| s.with_level_cap(self.level_cap))
            .map_err(|e| HarnessError::config("schedule", e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelSection {
    pub proposal_std: f64,
    pub mcmc_steps: usize,
    pub init_sweeps: usize,
}

impl Default for KernelSection {
    fn default() -> Self {
        let k = KernelConfig::default();
        Self { proposal_std: k.proposal_std, mcmc_steps: k.n_mcmc_steps, init_sweeps: k.n_init_sweeps }
    }
}

impl KernelSection {
    pub fn build(&self) -> Result<KernelConfig> {
        let k = KernelConfig { proposal_std: self.proposal_std, n_mcmc_steps: self.mcmc_steps, n_init_sweeps: self.init_sweeps };
        k.validate().map_err(|e| HarnessError::config("kernel", e.to_string()))?;
        Ok(k)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateConfig {
    /// Defaults to `model.theta_true`.
    pub theta: Option<f64>,
    /// Single-term replicates `M`.
    pub m: usize,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        Self { theta: None, m: 10 }
    }
}

/// MLSMC allocation `N_l = max(min, ⌈n_base · growth^L · 2^{-decay·l}⌉)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlsmcAllocation {
    pub n_base: usize,
    pub growth: f64,
    pub decay: f64,
    pub min: usize,
}

impl Default for MlsmcAllocation {
    fn default() -> Self {
        Self { n_base: 8, growth: 2.0, decay: 2.5, min: 2 }
    }
}

impl MlsmcAllocation {
    pub fn for_level(&self, max_level: usize) -> Allocation {
        let n0 = (self.n_base as f64 * self.growth.powi(max_level as i32)).ceil() as usize;
        Allocation::Geometric { n0, decay: self.decay, min: self.min }
    }

    fn validate(&self, path: &str) -> Result<()> {
        if self.n_base == 0 || self.min == 0 {
            return Err(HarnessError::config(path, "n_base and min must be at least 1"));
        }
        if !(self.growth >= 1.0 && self.decay >= 0.0) {
            return Err(HarnessError::config(path, "growth must be ≥ 1 and decay ≥ 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceConfig {
    /// Use this value instead of computing a reference.
    pub value: Option<f64>,
    /// General model: MLSMC level and run count averaged for the reference.
    pub level: usize,
    pub runs: usize,
    pub allocation: MlsmcAllocation,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self { value: None, level: 12, runs: 50, allocation: MlsmcAllocation::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MseConfig {
    /// Defaults to `model.theta_true`.
    pub theta: Option<f64>,
    pub p_max: Vec<usize>,
    /// Single-term replicates per unbiased estimate.
    pub m: Vec<usize>,
    pub mlsmc_levels: Vec<usize>,
    pub mlsmc: MlsmcAllocation,
    pub reference: ReferenceConfig,
}

impl Default for MseConfig {
    fn default() -> Self {
        Self {
            theta: None,
            p_max: vec![0, 1, 2],
            m: vec![1, 4, 16, 64],
            mlsmc_levels: vec![0, 1, 2, 3],
            mlsmc: MlsmcAllocation::default(),
            reference: ReferenceConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepKind {
    #[default]
    Harmonic,
    Constant,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignName {
    #[default]
    AscentOnLoglik,
    PaperVerbatim,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgdSection {
    pub xi_init: f64,
    pub step: StepKind,
    /// `α_1` (harmonic) or `α` (constant), one variant per entry.
    pub alpha: Vec<f64>,
    pub iterations: usize,
    pub m: Vec<usize>,
    pub p_max: Vec<usize>,
    pub sign: SignName,
    pub early_stop: bool,
    pub mlsmc_levels: Vec<usize>,
    pub mlsmc: MlsmcAllocation,
    /// Rows are written at roughly this many log-spaced iterations per decade.
    pub checkpoints_per_decade: usize,
    /// General model: reference MLE; rows carry NaN when absent.
    pub reference_mle: Option<f64>,
    /// Stop each trace once its cumulative cost reaches this many units.
    pub cost_budget: Option<u64>,
}

impl Default for SgdSection {
    fn default() -> Self {
        Self {
            xi_init: 0.0,
            step: StepKind::Harmonic,
            alpha: vec![0.1],
            iterations: 1000,
            m: vec![1],
            p_max: vec![0],
            sign: SignName::AscentOnLoglik,
            early_stop: false,
            mlsmc_levels: Vec::new(),
            mlsmc: MlsmcAllocation::default(),
            checkpoints_per_decade: 10,
            reference_mle: None,
            cost_budget: None,
        }
    }
}

impl SgdSection {
    pub fn step_schedule(&self, alpha: f64) -> StepSchedule {
        match self.step {
            StepKind::Harmonic => StepSchedule::Harmonic { alpha1: alpha },
            StepKind::Constant => StepSchedule::Constant { alpha },
        }
    }

    pub fn sign_convention(&self) -> SignConvention {
        match self.sign {
            SignName::AscentOnLoglik => SignConvention::AscentOnLogLik,
            SignName::PaperVerbatim => SignConvention::PaperVerbatim,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    /// Defaults to `[model.theta_true]`.
    pub theta: Vec<f64>,
    /// General model: schedule levels evaluated by quadrature.
    pub levels: Vec<usize>,
    pub n_nodes: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { theta: Vec::new(), levels: vec![0, 1, 2, 3, 4], n_nodes: 16 }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serialises")
    }

    /// SHA-256 of the canonical serialisation (after defaults and overrides),
    /// excluding the output path.
    pub fn hash(&self) -> String {
        let canonical = Self { output: None, ..self.clone() };
        hex::encode(Sha256::digest(canonical.to_toml().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if matches!(self.kind, ExperimentKind::Mse | ExperimentKind::Sgd) && self.replicates == 0 {
            return Err(HarnessError::config("replicates", "must be at least 1"));
        }
        if let Some(t) = self.model.theta_true {
            if !positive(t) {
                return Err(HarnessError::config("model.theta_true", "must be positive"));
            }
        }
        self.kernel.build()?;
        match self.kind {
            ExperimentKind::Estimate => {
                if self.estimate.m == 0 {
                    return Err(HarnessError::config("estimate.m", "must be at least 1"));
                }
                if self.estimate.theta.is_some_and(|t| !positive(t)) {
                    return Err(HarnessError::config("estimate.theta", "must be positive"));
                }
                self.schedule.build(self.schedule.p_max)?;
            }
            ExperimentKind::Mse => {
                let m = &self.mse;
                if m.p_max.is_empty() && m.mlsmc_levels.is_empty() {
                    return Err(HarnessError::config("mse", "needs at least one p_max or mlsmc level"));
                }
                if !m.p_max.is_empty() && (m.m.is_empty() || m.m.contains(&0)) {
                    return Err(HarnessError::config("mse.m", "must be a non-empty list of positive counts"));
                }
                if m.theta.is_some_and(|t| !positive(t)) {
                    return Err(HarnessError::config("mse.theta", "must be positive"));
                }
                for &p in &m.p_max {
                    self.schedule.build(p)?;
                }
                m.mlsmc.validate("mse.mlsmc")?;
                m.reference.allocation.validate("mse.reference.allocation")?;
                if m.reference.runs == 0 {
                    return Err(HarnessError::config("mse.reference.runs", "must be at least 1"));
                }
            }
            ExperimentKind::Sgd => {
                let s = &self.sgd;
                if s.alpha.is_empty() || s.alpha.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
                    return Err(HarnessError::config("sgd.alpha", "must be a non-empty list of non-negative step sizes"));
                }
                if !s.xi_init.is_finite() {
                    return Err(HarnessError::config("sgd.xi_init", "must be finite"));
                }
                if s.m.contains(&0) {
                    return Err(HarnessError::config("sgd.m", "entries must be at least 1"));
                }
                if (s.m.is_empty() || s.p_max.is_empty()) && s.mlsmc_levels.is_empty() {
                    return Err(HarnessError::config("sgd", "needs at least one unbiased or MLSMC variant"));
                }
                if s.checkpoints_per_decade == 0 {
                    return Err(HarnessError::config("sgd.checkpoints_per_decade", "must be at least 1"));
                }
                for &p in &s.p_max {
                    self.schedule.build(p)?;
                }
                s.mlsmc.validate("sgd.mlsmc")?;
            }
            ExperimentKind::Oracle => {
                if self.oracle.theta.iter().any(|t| !positive(*t)) {
                    return Err(HarnessError::config("oracle.theta", "entries must be positive"));
                }
                if self.oracle.n_nodes < 8 {
                    return Err(HarnessError::config("oracle.n_nodes", "must be at least 8"));
                }
            }
        }
        Ok(())
    }
}
