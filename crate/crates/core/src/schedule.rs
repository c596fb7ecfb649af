//! Probability mass functions for the random level `L` and the random sample
//! ladder depth `P`, and the ladder `N_p = np_base · 2^p`.

use rand::Rng;

use crate::error::{Error, Result};

/// Weights of `ℙ_P` before normalisation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PpRule {
    /// `2^{4-p}` for `p < 4`, `2^{-p} p log2(p)²` otherwise; decreasing in `p`.
    #[default]
    Piecewise,
    /// `2^{-p} (p+1) log2(p+2)²`; not monotone at small `p`.
    Theory,
}

impl PpRule {
    fn weight(self, p: usize) -> f64 {
        let pf = p as f64;
        match self {
            PpRule::Piecewise if p < 4 => (4.0 - pf).exp2(),
            PpRule::Piecewise => (-pf).exp2() * pf * pf.log2().powi(2),
            PpRule::Theory => (-pf).exp2() * (pf + 1.0) * (pf + 2.0).log2().powi(2),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RandomizationSchedule {
    pl_rate: f64,
    l_max: Option<usize>,
    l_cap: usize,
    p_max: usize,
    pp_rule: PpRule,
    np_base: usize,
    pl_table: Option<Vec<f64>>,
    pp: Vec<f64>,
    pp_tail: Vec<f64>,
}

/// Draws of `L` beyond this level abort instead of being silently truncated.
pub const DEFAULT_LEVEL_CAP: usize = 30;

impl RandomizationSchedule {
    pub fn new(pl_rate: f64, l_max: Option<usize>, p_max: usize, pp_rule: PpRule, np_base: usize) -> Result<Self> {
        if !(pl_rate > 0.0 && pl_rate.is_finite()) {
            return Err(Error::InvalidSchedule(format!("pl_rate must be positive, got {pl_rate}")));
        }
        if np_base == 0 {
            return Err(Error::InvalidSchedule("np_base must be at least 1".into()));
        }
        if p_max > 40 {
            return Err(Error::InvalidSchedule(format!("p_max = {p_max} overflows the sample ladder")));
        }
        let raw: Vec<f64> = (0..=p_max).map(|p| pp_rule.weight(p)).collect();
        let total: f64 = raw.iter().sum();
        let pp: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mut pp_tail = vec![0.0; p_max + 1];
        let mut acc = 0.0;
        for p in (0..=p_max).rev() {
            acc += pp[p];
            pp_tail[p] = acc;
        }
        pp_tail[0] = 1.0;
        let pl_table = l_max.map(|lm| {
            let w: Vec<f64> = (0..=lm).map(|l| (-pl_rate * l as f64).exp2()).collect();
            let t: f64 = w.iter().sum();
            w.into_iter().map(|v| v / t).collect()
        });
        Ok(Self { pl_rate, l_max, l_cap: DEFAULT_LEVEL_CAP, p_max, pp_rule, np_base, pl_table, pp, pp_tail })
    }

    /// `ℙ_L ∝ 2^{-2.5 l}` unbounded, piecewise `ℙ_P` up to `p_max`, `N_p = 2^{p+3}`.
    pub fn standard(p_max: usize) -> Self {
        Self::new(2.5, None, p_max, PpRule::Piecewise, 8).expect("standard schedule is valid")
    }

    pub fn with_level_cap(mut self, cap: usize) -> Self {
        self.l_cap = cap;
        self
    }

    pub fn pl_rate(&self) -> f64 {
        self.pl_rate
    }

    pub fn l_max(&self) -> Option<usize> {
        self.l_max
    }

    pub fn level_cap(&self) -> usize {
        self.l_cap
    }

    pub fn p_max(&self) -> usize {
        self.p_max
    }

    pub fn pp_rule(&self) -> PpRule {
        self.pp_rule
    }

    pub fn np_base(&self) -> usize {
        self.np_base
    }

    fn ratio(&self) -> f64 {
        (-self.pl_rate).exp2()
    }

    /// `ℙ_L(l)`.
    pub fn pl(&self, level: usize) -> f64 {
        match &self.pl_table {
            Some(t) => t.get(level).copied().unwrap_or(0.0),
            None => {
                let r = self.ratio();
                (1.0 - r) * r.powi(level as i32)
            }
        }
    }

    /// `ℙ_P(p)`.
    pub fn pp(&self, p: usize) -> f64 {
        self.pp.get(p).copied().unwrap_or(0.0)
    }

    /// `ℙ̄_P(p) = Σ_{q ≥ p} ℙ_P(q)`.
    pub fn pp_tail(&self, p: usize) -> f64 {
        self.pp_tail.get(p).copied().unwrap_or(0.0)
    }

    /// `N_p`.
    pub fn n_p(&self, p: usize) -> usize {
        self.np_base << p
    }

    pub fn sample_level<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<usize> {
        let level = match &self.pl_table {
            Some(t) => sample_table(t, rng),
            None => {
                // inverse CDF of the geometric law: P(L ≥ l) = r^l
                let u = 1.0 - rng.random::<f64>();
                let l = (u.ln() / self.ratio().ln()).floor();
                if l > self.l_cap as f64 {
                    usize::MAX
                } else {
                    l as usize
                }
            }
        };
        if level > self.l_cap {
            return Err(Error::LevelCapExceeded { level, cap: self.l_cap });
        }
        Ok(level)
    }

    pub fn sample_p<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        if self.p_max == 0 {
            return 0;
        }
        sample_table(&self.pp, rng)
    }

    /// `E[C] = Σ_{l,p} ℙ_L(l) ℙ_P(p) N_p c(l)` for a per-sample level cost
    /// `c(l)`; the unbounded level sum stops once terms fall below `1e-16`
    /// of the running total.
    pub fn expected_cost(&self, per_sample_cost: impl Fn(usize) -> f64) -> f64 {
        let mean_n: f64 = (0..=self.p_max).map(|p| self.pp(p) * self.n_p(p) as f64).sum();
        let mut total = 0.0;
        let top = self.l_max.unwrap_or(self.l_cap);
        for l in 0..=top {
            let term = self.pl(l) * per_sample_cost(l);
            total += term;
            if self.l_max.is_none() && l > 4 && term < 1e-16 * total {
                break;
            }
        }
        total * mean_n
    }
}

fn sample_table<R: Rng + ?Sized>(pmf: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in pmf.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    pmf.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn level_ratio_is_two_to_the_rate() {
        let s = RandomizationSchedule::standard(2);
        assert!((s.pl(0) / s.pl(1) - 2f64.powf(2.5)).abs() < 1e-12);
        let total: f64 = (0..200).map(|l| s.pl(l)).sum();
        assert!((total - 1.0).abs() < 1e-14);
    }

    #[test]
    fn piecewise_rule_values() {
        let s = RandomizationSchedule::standard(6);
        let raw = [16.0, 8.0, 4.0, 2.0, 1.0, 5.0 * 5f64.log2().powi(2) / 32.0, 6.0 * 6f64.log2().powi(2) / 64.0];
        let total: f64 = raw.iter().sum();
        for (p, r) in raw.iter().enumerate() {
            assert!((s.pp(p) - r / total).abs() < 1e-15);
        }
        for p in 1..=6 {
            assert!(s.pp(p) < s.pp(p - 1));
            assert!((s.pp_tail(p - 1) - s.pp_tail(p) - s.pp(p - 1)).abs() < 1e-15);
        }
        assert_eq!(s.pp_tail(0), 1.0);
        assert_eq!((0..=6).map(|p| s.n_p(p)).collect::<Vec<_>>(), vec![8, 16, 32, 64, 128, 256, 512]);
    }

    #[test]
    fn theory_rule_is_normalised() {
        let s = RandomizationSchedule::new(2.5, None, 5, PpRule::Theory, 1).unwrap();
        assert!(((0..=5).map(|p| s.pp(p)).sum::<f64>() - 1.0).abs() < 1e-14);
        assert_eq!(s.n_p(3), 8);
    }

    #[test]
    fn p_max_zero_always_draws_zero() {
        let s = RandomizationSchedule::standard(0);
        let mut rng = stream(1, &[]);
        assert!((0..1000).all(|_| s.sample_p(&mut rng) == 0));
        assert_eq!(s.pp(0), 1.0);
    }

    #[test]
    fn truncated_levels() {
        let s = RandomizationSchedule::new(2.5, Some(3), 0, PpRule::Piecewise, 8).unwrap();
        assert!(((0..=3).map(|l| s.pl(l)).sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(s.pl(4), 0.0);
        let mut rng = stream(2, &[]);
        assert!((0..10_000).all(|_| s.sample_level(&mut rng).unwrap() <= 3));
    }

    #[test]
    fn level_cap_is_an_error() {
        let s = RandomizationSchedule::new(0.05, None, 0, PpRule::Piecewise, 8).unwrap().with_level_cap(2);
        let mut rng = stream(3, &[]);
        let hit = (0..1000).any(|_| matches!(s.sample_level(&mut rng), Err(Error::LevelCapExceeded { .. })));
        assert!(hit);
    }

    #[test]
    fn invalid_schedules() {
        assert!(RandomizationSchedule::new(0.0, None, 2, PpRule::Piecewise, 8).is_err());
        assert!(RandomizationSchedule::new(2.5, None, 2, PpRule::Piecewise, 0).is_err());
    }

    #[test]
    fn expected_cost_matches_direct_sum() {
        let s = RandomizationSchedule::standard(2);
        let c = |l: usize| (1u64 << (l + 2)) as f64;
        let direct: f64 = (0..60)
            .flat_map(|l| (0..=2).map(move |p| (l, p)))
            .map(|(l, p)| s.pl(l) * s.pp(p) * s.n_p(p) as f64 * c(l))
            .sum();
        assert!((s.expected_cost(c) - direct).abs() < 1e-12 * direct);
    }
}
