//! Replicated experiments. Replicate `r` of variant `v` draws all of its
//! randomness from the stream derived from `(seed, v, r)`, and results are
//! collected in `(v, r)` order, so output does not depend on the worker count.

use std::fmt;

use rayon::prelude::*;
use serde::Serialize;

use ubgrad::model::Variant;
use ubgrad::oracle::{mle_toy, quadrature_expectation, ToyClosedForm};
use ubgrad::rng::derive_seed;
use ubgrad::sgd::{run_sgd, run_sgd_with_mlsmc, SgdConfig, SgdTrace};
use ubgrad::{estimate_gradient, mlsmc_baseline_estimate, ModelSpec, Theta};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MseRow {
    pub method: String,
    pub tag: String,
    pub replicate: usize,
    pub cost_units: u64,
    pub squared_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SgdRow {
    pub variant: String,
    pub replicate: usize,
    pub iteration: usize,
    pub cumulative_cost: u64,
    pub squared_error_to_mle: f64,
    pub squared_error_to_truth: f64,
}

fn theta(value: f64, path: &str) -> Result<Theta> {
    Theta::new(value).map_err(|e| HarnessError::config(path, e.to_string()))
}

/// Closed-form gradient for the toy model; otherwise the configured value or
/// the mean of independent high-level MLSMC runs.
pub fn gradient_reference(cfg: &ExperimentConfig, spec: &ModelSpec, at: Theta) -> Result<f64> {
    let r = &cfg.mse.reference;
    if let Some(v) = r.value {
        return Ok(v);
    }
    if let Variant::Toy { .. } = spec.variant() {
        return Ok(ToyClosedForm::from_spec(spec)?.grad_log_marginal(at)?);
    }
    let kernel = cfg.kernel.build()?;
    let alloc = r.allocation.for_level(r.level);
    let values: Vec<f64> = (0..r.runs)
        .into_par_iter()
        .map(|i| {
            let seed = derive_seed(cfg.seed, &[u64::MAX, i as u64]);
            Ok(mlsmc_baseline_estimate(spec, at, r.level, &alloc, &kernel, seed)?.value[0])
        })
        .collect::<Result<_>>()?;
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

enum MseVariant {
    Unbiased { p_max: usize, m: usize },
    Mlsmc { level: usize },
}

impl MseVariant {
    fn method(&self) -> &'static str {
        match self {
            MseVariant::Unbiased { .. } => "unbiased",
            MseVariant::Mlsmc { .. } => "mlsmc",
        }
    }

    fn tag(&self) -> String {
        match self {
            MseVariant::Unbiased { p_max, m } => format!("pmax={p_max};M={m}"),
            MseVariant::Mlsmc { level } => format!("L={level}"),
        }
    }
}

/// One row per replicate of every unbiased `(p_max, M)` and MLSMC `L` variant.
pub fn run_single_estimator_experiment(cfg: &ExperimentConfig) -> Result<Vec<MseRow>> {
    let spec = cfg.model.build()?;
    let at = theta(cfg.mse.theta.unwrap_or(cfg.model.theta_true()), "mse.theta")?;
    let truth = gradient_reference(cfg, &spec, at)?;
    let kernel = cfg.kernel.build()?;
    let mut variants = Vec::new();
    for &p_max in &cfg.mse.p_max {
        for &m in &cfg.mse.m {
            variants.push(MseVariant::Unbiased { p_max, m });
        }
    }
    variants.extend(cfg.mse.mlsmc_levels.iter().map(|&level| MseVariant::Mlsmc { level }));
    let schedules = cfg.mse.p_max.iter().map(|&p| Ok((p, cfg.schedule.build(p)?))).collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize)> =
        (0..variants.len()).flat_map(|v| (0..cfg.replicates).map(move |r| (v, r))).collect();
    jobs.par_iter()
        .map(|&(v, r)| {
            let seed = derive_seed(cfg.seed, &[v as u64, r as u64]);
            let variant = &variants[v];
            let est = match *variant {
                MseVariant::Unbiased { p_max, m } => {
                    let schedule = &schedules.iter().find(|(p, _)| *p == p_max).expect("schedule built").1;
                    estimate_gradient(&spec, at, m, schedule, &kernel, seed)?
                }
                MseVariant::Mlsmc { level } => {
                    mlsmc_baseline_estimate(&spec, at, level, &cfg.mse.mlsmc.for_level(level), &kernel, seed)?
                }
            };
            Ok(MseRow {
                method: variant.method().to_string(),
                tag: variant.tag(),
                replicate: r,
                cost_units: est.cost_units(),
                squared_error: (est.value[0] - truth).powi(2),
            })
        })
        .collect()
}

/// Iterations `0, 1, …` at roughly `per_decade` log-spaced points, plus the last.
pub fn checkpoints(iterations: usize, per_decade: usize) -> Vec<usize> {
    let mut out = vec![0];
    let mut j = 0;
    loop {
        let k = 10f64.powf(j as f64 / per_decade as f64).round() as usize;
        if k > iterations {
            break;
        }
        if out.last() != Some(&k) {
            out.push(k);
        }
        j += 1;
    }
    if out.last() != Some(&iterations) {
        out.push(iterations);
    }
    out
}

enum SgdVariant {
    Unbiased { alpha: f64, p_max: usize, m: usize },
    Mlsmc { alpha: f64, level: usize },
}

impl SgdVariant {
    fn name(&self) -> String {
        match self {
            SgdVariant::Unbiased { alpha, p_max, m } => format!("unbiased;alpha={alpha};pmax={p_max};M={m}"),
            SgdVariant::Mlsmc { alpha, level } => format!("mlsmc;alpha={alpha};L={level}"),
        }
    }
}

/// Reference MLE for the SGD error: analytic for the toy model, configured otherwise.
pub fn mle_reference(cfg: &ExperimentConfig, spec: &ModelSpec) -> Result<f64> {
    if let Some(v) = cfg.sgd.reference_mle {
        return Ok(v);
    }
    match spec.variant() {
        Variant::Toy { .. } => Ok(mle_toy(&ToyClosedForm::from_spec(spec)?)?.theta),
        Variant::General => Ok(f64::NAN),
    }
}

fn sgd_config(cfg: &ExperimentConfig, alpha: f64, p_max: usize, m: usize) -> Result<SgdConfig> {
    let s = &cfg.sgd;
    let mut c = SgdConfig::new(s.xi_init, s.step_schedule(alpha), s.iterations, cfg.schedule.build(p_max)?);
    c.replicates = m;
    c.kernel = cfg.kernel.build()?;
    c.sign = s.sign_convention();
    c.early_stop = s.early_stop;
    c.cost_budget = s.cost_budget;
    Ok(c)
}

fn trace_rows(trace: &SgdTrace, variant: &str, replicate: usize, marks: &[usize], mle: f64, truth: f64) -> Vec<SgdRow> {
    let last = trace.last().iteration;
    let mut picked: Vec<usize> = marks.iter().copied().filter(|&k| k <= last).collect();
    if picked.last() != Some(&last) {
        picked.push(last);
    }
    picked
        .into_iter()
        .map(|k| {
            let s = &trace.steps[k];
            SgdRow {
                variant: variant.to_string(),
                replicate,
                iteration: k,
                cumulative_cost: s.cumulative_cost,
                squared_error_to_mle: (s.theta - mle).powi(2),
                squared_error_to_truth: (s.theta - truth).powi(2),
            }
        })
        .collect()
}

/// `R` independent SGD traces per variant, sampled at log-spaced iterations.
pub fn run_sgd_experiment(cfg: &ExperimentConfig) -> Result<Vec<SgdRow>> {
    let spec = cfg.model.build()?;
    let s = &cfg.sgd;
    let mle = mle_reference(cfg, &spec)?;
    let truth = cfg.model.theta_true();
    let mut variants = Vec::new();
    for &alpha in &s.alpha {
        for &p_max in &s.p_max {
            for &m in &s.m {
                variants.push(SgdVariant::Unbiased { alpha, p_max, m });
            }
        }
    }
    for &alpha in &s.alpha {
        variants.extend(s.mlsmc_levels.iter().map(|&level| SgdVariant::Mlsmc { alpha, level }));
    }
    let marks = checkpoints(s.iterations, s.checkpoints_per_decade);
    let jobs: Vec<(usize, usize)> =
        (0..variants.len()).flat_map(|v| (0..cfg.replicates).map(move |r| (v, r))).collect();
    let per_job: Vec<Vec<SgdRow>> = jobs
        .par_iter()
        .map(|&(v, r)| {
            let seed = derive_seed(cfg.seed, &[v as u64, r as u64]);
            let variant = &variants[v];
            let trace = match *variant {
                SgdVariant::Unbiased { alpha, p_max, m } => run_sgd(&spec, &sgd_config(cfg, alpha, p_max, m)?, seed)?,
                SgdVariant::Mlsmc { alpha, level } => {
                    let c = sgd_config(cfg, alpha, 0, 1)?;
                    run_sgd_with_mlsmc(&spec, &c, level, &s.mlsmc.for_level(level), seed)?
                }
            };
            Ok(trace_rows(&trace, &variant.name(), r, &marks, mle, truth))
        })
        .collect::<Result<_>>()?;
    Ok(per_job.into_iter().flatten().collect())
}

/// Result of the `estimate` subcommand.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimateReport {
    pub theta: f64,
    pub value: f64,
    pub draws: Vec<(usize, usize)>,
    pub cost_units: u64,
}

impl fmt::Display for EstimateReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "theta = {}", self.theta)?;
        writeln!(f, "gradient = {}", self.value)?;
        writeln!(f, "replicates = {}", self.draws.len())?;
        writeln!(f, "cost_units = {}", self.cost_units)?;
        for (i, (l, p)) in self.draws.iter().enumerate() {
            writeln!(f, "draw {i}: L = {l}, P = {p}")?;
        }
        Ok(())
    }
}

pub fn run_estimate(cfg: &ExperimentConfig) -> Result<EstimateReport> {
    let spec = cfg.model.build()?;
    let at = theta(cfg.estimate.theta.unwrap_or(cfg.model.theta_true()), "estimate.theta")?;
    let schedule = cfg.schedule.build(cfg.schedule.p_max)?;
    let est = estimate_gradient(&spec, at, cfg.estimate.m, &schedule, &cfg.kernel.build()?, cfg.seed)?;
    Ok(EstimateReport { theta: at.value(), value: est.value[0], draws: est.draws.clone(), cost_units: est.cost_units() })
}

/// Reference values printed by the `oracle` subcommand.
pub fn run_oracle(cfg: &ExperimentConfig) -> Result<String> {
    use std::fmt::Write;
    let spec = cfg.model.build()?;
    let thetas = if cfg.oracle.theta.is_empty() { vec![cfg.model.theta_true()] } else { cfg.oracle.theta.clone() };
    let mut out = String::new();
    let w = |out: &mut String, line: String| {
        let _ = writeln!(out, "{line}");
    };
    w(&mut out, format!("y = {:?}", spec.y()));
    if let Variant::Toy { .. } = spec.variant() {
        let cf = ToyClosedForm::from_spec(&spec)?;
        for &t in &thetas {
            let at = theta(t, "oracle.theta")?;
            w(&mut out, format!("theta = {t}: log_marginal = {}, grad_log_marginal = {}", cf.log_marginal(at)?, cf.grad_log_marginal(at)?));
        }
        let mle = mle_toy(&cf)?;
        w(&mut out, format!("mle = {} (log = {}, interior = {})", mle.theta, mle.log_theta, mle.interior));
    }
    if spec.latent_dim() <= 2 {
        for &t in &thetas {
            let at = theta(t, "oracle.theta")?;
            for &l in &cfg.oracle.levels {
                let q = quadrature_expectation(&spec, at, l, cfg.oracle.n_nodes)?;
                w(
                    &mut out,
                    format!("theta = {t}, level = {l}: log_z = {}, expectation = {}, nodes = {}", q.log_z, q.expectation[0], q.nodes),
                );
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoints_are_log_spaced_and_include_ends() {
        assert_eq!(checkpoints(0, 10), vec![0]);
        assert_eq!(checkpoints(10, 2), vec![0, 1, 3, 10]);
        let c = checkpoints(1000, 10);
        assert_eq!(c.first(), Some(&0));
        assert_eq!(c.last(), Some(&1000));
        assert!(c.windows(2).all(|w| w[0] < w[1]));
        assert!(c.contains(&10) && c.contains(&100));
    }
}
