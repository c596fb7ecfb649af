//! Doubly randomised single-term estimator of `∇_θ log Z_θ`.
//!
//! For a level `l` and ladder depth `P`, `P + 1` independent MLSMC runs with
//! `N_p - N_{p-1}` particles are pooled at level `(l-1)∨0`. Successive
//! differences of the pooled estimators give `Ξ^{l,p}`, the coupled sum
//! `Ξ^l = Σ_p Ξ^{l,p} / ℙ̄_P(p)` removes the finite-`N` bias in expectation
//! over `P`, and `Ξ^L / ℙ_L(L)` removes the discretisation bias in
//! expectation over `L`.

use rand::Rng;
use rayon::prelude::*;

use crate::cost::CostLedger;
use crate::error::{Error, Result};
use crate::model::{ModelSpec, Theta};
use crate::rng::stream;
use crate::schedule::RandomizationSchedule;
use crate::smc::{increment_estimate, run_mlsmc_final, KernelConfig};

/// `Ξ^{l,p}` for `p = 0..=P` together with the pooled estimators they telescope.
#[derive(Clone, Debug, PartialEq)]
pub struct IncrementTable {
    pub level: usize,
    /// `Ξ^{l,p}`, one vector of length `d_θ` per `p`.
    pub increments: Vec<Vec<f64>>,
    /// Pooled estimator over `N_{0:p}` particles, one per `p`.
    pub pooled: Vec<Vec<f64>>,
}

impl IncrementTable {
    pub fn depth(&self) -> usize {
        self.increments.len() - 1
    }

    /// `Σ_{p=0}^{P} Ξ^{l,p} / ℙ̄_P(p)`.
    pub fn coupled_sum(&self, schedule: &RandomizationSchedule) -> Vec<f64> {
        let d = self.increments[0].len();
        let mut acc = vec![0.0; d];
        for (p, inc) in self.increments.iter().enumerate() {
            let tail = schedule.pp_tail(p);
            for (a, v) in acc.iter_mut().zip(inc) {
                *a += v / tail;
            }
        }
        acc
    }
}

struct PooledRecord {
    coarse: Vec<f64>,
    fine: Vec<f64>,
    log_g: f64,
}

fn pooled_estimate(records: &[PooledRecord], level: usize, d: usize) -> Vec<f64> {
    let n = records.len() as f64;
    let mut coarse = vec![0.0; d];
    for r in records {
        for (a, v) in coarse.iter_mut().zip(&r.coarse) {
            *a += v / n;
        }
    }
    if level == 0 {
        return coarse;
    }
    let shift = records.iter().map(|r| r.log_g).fold(f64::NEG_INFINITY, f64::max);
    let mut num = vec![0.0; d];
    let mut den = 0.0;
    for r in records {
        let w = (r.log_g - shift).exp();
        den += w;
        for (a, v) in num.iter_mut().zip(&r.fine) {
            *a += w * v;
        }
    }
    num.iter().zip(&coarse).map(|(a, c)| a / den - c).collect()
}

/// Algorithm for one `(l, P)`: independent MLSMC runs pooled at level `(l-1)∨0`.
pub fn pooled_increment_run<R: Rng + ?Sized>(
    spec: &ModelSpec,
    theta: Theta,
    level: usize,
    depth: usize,
    schedule: &RandomizationSchedule,
    kernel: &KernelConfig,
    rng: &mut R,
    ledger: &mut CostLedger,
) -> Result<IncrementTable> {
    if depth > schedule.p_max() {
        return Err(Error::InvalidSchedule(format!("P = {depth} exceeds p_max = {}", schedule.p_max())));
    }
    let d = spec.theta_dim();
    let mut records: Vec<PooledRecord> = Vec::with_capacity(schedule.n_p(depth));
    let mut increments = Vec::with_capacity(depth + 1);
    let mut pooled: Vec<Vec<f64>> = Vec::with_capacity(depth + 1);
    for p in 0..=depth {
        let chunk = schedule.n_p(p) - if p == 0 { 0 } else { schedule.n_p(p - 1) };
        let wrap = |e: Error| Error::Increment { level, p, source: Box::new(e) };
        let mut ens = run_mlsmc_final(spec, theta, chunk, level, kernel, rng, ledger).map_err(wrap)?;
        let log_g = if level == 0 { vec![0.0; chunk] } else { ens.log_potentials(spec, theta).map_err(wrap)? };
        for (part, lg) in ens.particles().iter().zip(log_g) {
            let coarse = spec.grad_obs(theta, &part.obs);
            let fine = match &part.obs_finer {
                Some(o) if level > 0 => spec.grad_obs(theta, o),
                _ => Vec::new(),
            };
            records.push(PooledRecord { coarse, fine, log_g: lg });
        }
        let current = pooled_estimate(&records, level, d);
        let inc = match pooled.last() {
            Some(prev) => current.iter().zip(prev).map(|(a, b)| a - b).collect(),
            None => current.clone(),
        };
        increments.push(inc);
        pooled.push(current);
    }
    Ok(IncrementTable { level, increments, pooled })
}

/// `Ξ^l` for a given `P`.
pub fn xi_l<R: Rng + ?Sized>(
    spec: &ModelSpec,
    theta: Theta,
    level: usize,
    depth: usize,
    schedule: &RandomizationSchedule,
    kernel: &KernelConfig,
    rng: &mut R,
    ledger: &mut CostLedger,
) -> Result<Vec<f64>> {
    Ok(pooled_increment_run(spec, theta, level, depth, schedule, kernel, rng, ledger)?.coupled_sum(schedule))
}

/// One draw `Ξ^L / ℙ_L(L)` with its `(L, P)` and cost.
#[derive(Clone, Debug, PartialEq)]
pub struct SingleTerm {
    pub level: usize,
    pub depth: usize,
    pub value: Vec<f64>,
    pub ledger: CostLedger,
}

pub fn single_term<R: Rng + ?Sized>(
    spec: &ModelSpec,
    theta: Theta,
    schedule: &RandomizationSchedule,
    kernel: &KernelConfig,
    rng: &mut R,
) -> Result<SingleTerm> {
    let level = schedule.sample_level(rng)?;
    let depth = schedule.sample_p(rng);
    let mut ledger = CostLedger::new();
    let xi = xi_l(spec, theta, level, depth, schedule, kernel, rng, &mut ledger)?;
    let pl = schedule.pl(level);
    Ok(SingleTerm { level, depth, value: xi.into_iter().map(|v| v / pl).collect(), ledger })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientEstimate {
    pub value: Vec<f64>,
    /// Per-replicate `(L_i, P_i)`; empty for the MLSMC baseline.
    pub draws: Vec<(usize, usize)>,
    /// Per-replicate single-term values (or per-level terms for the baseline).
    pub terms: Vec<Vec<f64>>,
    pub ledger: CostLedger,
}

impl GradientEstimate {
    pub fn replicates(&self) -> usize {
        self.terms.len()
    }

    pub fn cost_units(&self) -> u64 {
        self.ledger.total_units()
    }
}

fn average(terms: &[Vec<f64>], d: usize) -> Vec<f64> {
    let mut acc = vec![0.0; d];
    for t in terms {
        for (a, v) in acc.iter_mut().zip(t) {
            *a += v;
        }
    }
    acc.iter().map(|a| a / terms.len() as f64).collect()
}

/// Average of `m` independent single-term draws. Replicate `i` uses the
/// stream derived from `(seed, i)`, and the reduction runs in replicate order.
pub fn estimate_gradient(
    spec: &ModelSpec,
    theta: Theta,
    m: usize,
    schedule: &RandomizationSchedule,
    kernel: &KernelConfig,
    seed: u64,
) -> Result<GradientEstimate> {
    if m == 0 {
        return Err(Error::InvalidConfig("number of replicates M must be at least 1".into()));
    }
    let draws: Vec<SingleTerm> = (0..m)
        .into_par_iter()
        .map(|i| single_term(spec, theta, schedule, kernel, &mut stream(seed, &[i as u64])))
        .collect::<Result<_>>()?;
    let mut ledger = CostLedger::new();
    draws.iter().for_each(|d| ledger.merge(&d.ledger));
    let terms: Vec<Vec<f64>> = draws.iter().map(|d| d.value.clone()).collect();
    Ok(GradientEstimate {
        value: average(&terms, spec.theta_dim()),
        draws: draws.iter().map(|d| (d.level, d.depth)).collect(),
        terms,
        ledger,
    })
}

/// Per-level sample sizes of the MLSMC baseline.
#[derive(Clone, Debug, PartialEq)]
pub enum Allocation {
    /// `N_l = max(min, ⌈n0 · 2^{-decay·l}⌉)`.
    Geometric { n0: usize, decay: f64, min: usize },
    Explicit(Vec<usize>),
}

impl Allocation {
    pub fn n_at(&self, level: usize) -> Result<usize> {
        let n = match self {
            Allocation::Geometric { n0, decay, min } => {
                ((*n0 as f64) * (-decay * level as f64).exp2()).ceil().max(*min as f64) as usize
            }
            Allocation::Explicit(ns) => *ns.get(level).ok_or_else(|| {
                Error::InvalidConfig(format!("explicit allocation has no entry for level {level}"))
            })?,
        };
        if n == 0 {
            return Err(Error::InvalidConfig(format!("allocation gives zero samples at level {level}")));
        }
        Ok(n)
    }
}

/// Biased MLSMC telescoping estimate up to level `max_level`, one independent
/// run per level.
pub fn mlsmc_baseline_estimate(
    spec: &ModelSpec,
    theta: Theta,
    max_level: usize,
    allocation: &Allocation,
    kernel: &KernelConfig,
    seed: u64,
) -> Result<GradientEstimate> {
    let terms: Vec<(Vec<f64>, CostLedger)> = (0..=max_level)
        .into_par_iter()
        .map(|l| {
            let n = allocation.n_at(l)?;
            let mut rng = stream(seed, &[l as u64]);
            let mut ledger = CostLedger::new();
            let mut ens = run_mlsmc_final(spec, theta, n, l, kernel, &mut rng, &mut ledger)?;
            let term = if l == 0 { ens.mean_phi(spec, theta) } else { increment_estimate(&mut ens, spec, theta)? };
            Ok((term, ledger))
        })
        .collect::<Result<_>>()?;
    let mut ledger = CostLedger::new();
    let mut value = vec![0.0; spec.theta_dim()];
    for (t, l) in &terms {
        ledger.merge(l);
        value.iter_mut().zip(t).for_each(|(a, v)| *a += v);
    }
    Ok(GradientEstimate { value, draws: Vec::new(), terms: terms.into_iter().map(|(t, _)| t).collect(), ledger })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn theta(v: f64) -> Theta {
        Theta::new(v).unwrap()
    }

    #[test]
    fn level_zero_depth_zero_is_plain_mean() {
        let spec = ModelSpec::toy_example().unwrap();
        let sched = RandomizationSchedule::standard(2);
        let kernel = KernelConfig::default();
        let t = theta(2.0);
        let table =
            pooled_increment_run(&spec, t, 0, 0, &sched, &kernel, &mut stream(1, &[]), &mut CostLedger::new()).unwrap();
        // rerun the single MLSMC instance on the same stream
        let mut rng = stream(1, &[]);
        let ens = run_mlsmc_final(&spec, t, 8, 0, &kernel, &mut rng, &mut CostLedger::new()).unwrap();
        assert_eq!(table.increments, vec![ens.mean_phi(&spec, t)]);
        assert_eq!(table.coupled_sum(&sched), table.increments[0]);
    }

    #[test]
    fn increments_telescope_to_pooled_estimator() {
        let spec = ModelSpec::general_example().unwrap();
        let sched = RandomizationSchedule::standard(3);
        for level in [0, 2] {
            let table = pooled_increment_run(
                &spec,
                theta(0.3),
                level,
                3,
                &sched,
                &KernelConfig::default(),
                &mut stream(2, &[level as u64]),
                &mut CostLedger::new(),
            )
            .unwrap();
            let sum: f64 = table.increments.iter().map(|v| v[0]).sum();
            assert!((sum - table.pooled[3][0]).abs() <= 1e-12 * table.pooled[3][0].abs().max(1.0));
        }
    }

    #[test]
    fn run_cost_matches_ladder() {
        let spec = ModelSpec::toy_example().unwrap();
        let sched = RandomizationSchedule::standard(2);
        let mut ledger = CostLedger::new();
        pooled_increment_run(&spec, theta(2.0), 2, 2, &sched, &KernelConfig::default(), &mut stream(3, &[]), &mut ledger)
            .unwrap();
        // N_2 = 32 particles through levels 0 and 1, each with its finer mesh
        assert_eq!(ledger.total_units(), 32 * ((4 + 8) + (8 + 16)));
    }

    #[test]
    fn depth_beyond_p_max_is_rejected() {
        let spec = ModelSpec::toy_example().unwrap();
        let sched = RandomizationSchedule::standard(1);
        let r = pooled_increment_run(
            &spec,
            theta(2.0),
            0,
            2,
            &sched,
            &KernelConfig::default(),
            &mut stream(4, &[]),
            &mut CostLedger::new(),
        );
        assert!(r.is_err());
    }

    #[test]
    fn single_replicate_is_the_single_term() {
        let spec = ModelSpec::toy_example().unwrap();
        let sched = RandomizationSchedule::standard(2);
        let kernel = KernelConfig::default();
        let est = estimate_gradient(&spec, theta(2.0), 1, &sched, &kernel, 9).unwrap();
        let one = single_term(&spec, theta(2.0), &sched, &kernel, &mut stream(9, &[0])).unwrap();
        assert_eq!(est.value, one.value);
        assert_eq!(est.draws, vec![(one.level, one.depth)]);
        assert_eq!(est.ledger, one.ledger);
    }

    #[test]
    fn estimates_are_reproducible_and_cost_additive() {
        let spec = ModelSpec::toy_example().unwrap();
        let sched = RandomizationSchedule::standard(2);
        let kernel = KernelConfig::default();
        let a = estimate_gradient(&spec, theta(2.0), 10, &sched, &kernel, 11).unwrap();
        let b = estimate_gradient(&spec, theta(2.0), 10, &sched, &kernel, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.draws.len(), 10);
        let parts: u64 = (0..10)
            .map(|i| single_term(&spec, theta(2.0), &sched, &kernel, &mut stream(11, &[i])).unwrap().ledger.total_units())
            .sum();
        assert_eq!(parts, a.cost_units());
    }

    #[test]
    fn baseline_level_zero_is_level_zero_mean() {
        let spec = ModelSpec::toy_example().unwrap();
        let kernel = KernelConfig::default();
        let alloc = Allocation::Explicit(vec![16]);
        let est = mlsmc_baseline_estimate(&spec, theta(2.0), 0, &alloc, &kernel, 5).unwrap();
        let ens = run_mlsmc_final(&spec, theta(2.0), 16, 0, &kernel, &mut stream(5, &[0]), &mut CostLedger::new()).unwrap();
        assert_eq!(est.value, ens.mean_phi(&spec, theta(2.0)));
        assert_eq!(est.cost_units(), 16 * 4);
    }

    #[test]
    fn allocation_rules() {
        let g = Allocation::Geometric { n0: 1000, decay: 2.5, min: 2 };
        assert_eq!(g.n_at(0).unwrap(), 1000);
        assert_eq!(g.n_at(1).unwrap(), 177);
        assert_eq!(g.n_at(10).unwrap(), 2);
        assert!(Allocation::Explicit(vec![3]).n_at(1).is_err());
    }
}
