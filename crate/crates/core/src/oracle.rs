//! Reference values: the closed-form toy marginal likelihood, tensor
//! Gauss–Legendre posterior expectations and the toy maximum-likelihood
//! estimate.
//!
//! The toy observation map is linear, `G(u) = u g` with
//! `g_i = (x_i² - x_i)/2`, so integrating `u` over `[-1, 1]` leaves an erf
//! bracket. Additive constants independent of `θ` are dropped.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::model::{ModelSpec, Theta, Variant};
use crate::pde::ForwardModel;
use crate::quadrature::GaussLegendre;

const FRAC_2_SQRT_PI: f64 = std::f64::consts::FRAC_2_SQRT_PI;

pub fn erf(x: f64) -> f64 {
    libm::erf(x)
}

pub fn erfc(x: f64) -> f64 {
    libm::erfc(x)
}

/// `log erfc(x)`, finite for all finite `x`.
pub fn log_erfc(x: f64) -> f64 {
    if x < 10.0 {
        return erfc(x).ln();
    }
    // erfc(x) = e^{-x²}/√π · 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + …))))
    let mut tail = x;
    for k in (1..=60).rev() {
        tail = x + 0.5 * k as f64 / tail;
    }
    -x * x - 0.5 * PI.ln() - tail.ln()
}

/// `log(erf(a) - erf(b))` for `a > b`, without cancellation in either tail.
pub fn log_erf_diff(a: f64, b: f64) -> Result<f64> {
    if !(a > b) {
        return Err(Error::LogDomain { a, b });
    }
    let value = if b >= 0.0 {
        let (la, lb) = (log_erfc(a), log_erfc(b));
        lb + (-(la - lb).exp()).ln_1p()
    } else if a <= 0.0 {
        let (la, lb) = (log_erfc(-b), log_erfc(-a));
        lb + (-(la - lb).exp()).ln_1p()
    } else {
        (erf(a) - erf(b)).ln()
    };
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::LogDomain { a, b })
    }
}

/// Sufficient statistics of the toy model.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyClosedForm {
    pub g: Vec<f64>,
    pub y: Vec<f64>,
    pub prior_sigma: f64,
}

struct Bracket {
    a: f64,
    b: f64,
    log_d: f64,
}

impl ToyClosedForm {
    pub fn new(points: &[f64], y: Vec<f64>, prior_sigma: f64) -> Result<Self> {
        if points.len() != y.len() {
            return Err(Error::DimensionMismatch { what: "observations", got: y.len(), expected: points.len() });
        }
        let g: Vec<f64> = points.iter().map(|x| 0.5 * (x * x - x)).collect();
        if g.iter().all(|v| *v == 0.0) {
            return Err(Error::InvalidConfig("toy observation map is identically zero".into()));
        }
        Ok(Self { g, y, prior_sigma })
    }

    pub fn from_spec(spec: &ModelSpec) -> Result<Self> {
        match (spec.variant(), spec.forward_model()) {
            (Variant::Toy { prior_sigma }, ForwardModel::Poisson) => {
                Self::new(spec.points(), spec.y().to_vec(), prior_sigma)
            }
            _ => Err(Error::InvalidConfig("closed form is only available for the toy model".into())),
        }
    }

    fn m(&self) -> f64 {
        self.g.len() as f64
    }

    pub fn g_norm(&self) -> f64 {
        self.g.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `gᵀy / ‖g‖²`, the unconstrained least-squares latent.
    pub fn centre(&self) -> f64 {
        let gy: f64 = self.g.iter().zip(&self.y).map(|(a, b)| a * b).sum();
        gy / (self.g_norm() * self.g_norm())
    }

    /// `‖y‖² - (gᵀy)²/‖g‖²`.
    pub fn residual(&self) -> f64 {
        let yy: f64 = self.y.iter().map(|v| v * v).sum();
        let gn2 = self.g_norm().powi(2);
        let c = self.centre();
        (yy - c * c * gn2).max(0.0)
    }

    fn bracket(&self, theta: Theta) -> Result<Bracket> {
        let s = (0.5 * theta.value()).sqrt() * self.g_norm();
        let c = self.centre();
        let (a, b) = (s * (1.0 - c), s * (-1.0 - c));
        Ok(Bracket { a, b, log_d: log_erf_diff(a, b)? })
    }

    pub fn log_marginal(&self, theta: Theta) -> Result<f64> {
        let t = theta.value();
        let lt = theta.ln();
        let br = self.bracket(theta)?;
        Ok(0.5 * (self.m() - 3.0) * lt - 0.5 * t * self.residual() - lt * lt / (2.0 * self.prior_sigma.powi(2))
            + br.log_d)
    }

    pub fn grad_log_marginal(&self, theta: Theta) -> Result<f64> {
        let t = theta.value();
        let br = self.bracket(theta)?;
        let term = |x: f64| if x == 0.0 { 0.0 } else { x * (-x * x - br.log_d).exp() };
        let bracket = FRAC_2_SQRT_PI / (2.0 * t) * (term(br.a) - term(br.b));
        Ok(0.5 * (self.m() - 3.0) / t - 0.5 * self.residual() - theta.ln() / (self.prior_sigma.powi(2) * t) + bracket)
    }
}

pub fn toy_log_marginal(theta: Theta, cf: &ToyClosedForm) -> Result<f64> {
    cf.log_marginal(theta)
}

pub fn toy_grad_log_marginal(theta: Theta, cf: &ToyClosedForm) -> Result<f64> {
    cf.grad_log_marginal(theta)
}

/// `log Z_θ^l` and `η_θ^l(φ_θ^l)` from tensor Gauss–Legendre quadrature.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureResult {
    pub log_z: f64,
    pub expectation: Vec<f64>,
    pub nodes: usize,
}

pub const MAX_QUADRATURE_NODES: usize = 4096;
const QUADRATURE_RTOL: f64 = 1e-10;

fn tensor_rule(spec: &ModelSpec, theta: Theta, level: usize, n: usize) -> Result<QuadratureResult> {
    let k = spec.latent_dim();
    let gl = GaussLegendre::new(n);
    let rule: Vec<(f64, f64)> = gl.on_interval(-1.0, 1.0).collect();
    let total = n.pow(k as u32);
    let d = spec.theta_dim();
    let mut log_w = Vec::with_capacity(total);
    let mut phis = Vec::with_capacity(total);
    let mut u = vec![0.0; k];
    for idx in 0..total {
        let mut rest = idx;
        let mut lw = 0.0;
        for uj in u.iter_mut() {
            let (x, w) = rule[rest % n];
            rest /= n;
            *uj = x;
            lw += w.ln();
        }
        let obs = spec.forward(&u, level)?;
        log_w.push(lw + spec.log_gamma_obs(theta, &obs));
        phis.push(spec.grad_obs(theta, &obs));
    }
    let shift = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    let mut num = vec![0.0; d];
    for (lw, phi) in log_w.iter().zip(&phis) {
        let w = (lw - shift).exp();
        z += w;
        num.iter_mut().zip(phi).for_each(|(a, p)| *a += w * p);
    }
    Ok(QuadratureResult { log_z: shift + z.ln(), expectation: num.iter().map(|a| a / z).collect(), nodes: n })
}

fn converged(a: &QuadratureResult, b: &QuadratureResult) -> bool {
    let rel = |x: f64, y: f64| (x - y).abs() <= QUADRATURE_RTOL * x.abs().max(y.abs()).max(f64::MIN_POSITIVE);
    (a.log_z - b.log_z).abs() <= QUADRATURE_RTOL
        && a.expectation.iter().zip(&b.expectation).all(|(x, y)| rel(*x, *y))
}

/// Doubles the node count from `n_nodes` per dimension until successive
/// results agree to `1e-10` relative.
pub fn quadrature_expectation(spec: &ModelSpec, theta: Theta, level: usize, n_nodes: usize) -> Result<QuadratureResult> {
    let k = spec.latent_dim();
    if k == 0 || k > 2 {
        return Err(Error::QuadratureDimension(k));
    }
    if n_nodes < 8 {
        return Err(Error::InvalidConfig(format!("quadrature needs at least 8 nodes per dimension, got {n_nodes}")));
    }
    let mut n = n_nodes;
    let mut prev = tensor_rule(spec, theta, level, n)?;
    while n < MAX_QUADRATURE_NODES {
        n = (2 * n).min(MAX_QUADRATURE_NODES);
        let next = tensor_rule(spec, theta, level, n)?;
        if converged(&prev, &next) {
            return Ok(next);
        }
        prev = next;
    }
    Err(Error::QuadratureFailed { nodes: n })
}

/// `η_θ^l(φ_θ^l) - η_θ^{l-1}(φ_θ^{l-1})`, or `η_θ^0(φ_θ^0)` at level 0.
pub fn quadrature_increment(spec: &ModelSpec, theta: Theta, level: usize, n_nodes: usize) -> Result<Vec<f64>> {
    let fine = quadrature_expectation(spec, theta, level, n_nodes)?;
    if level == 0 {
        return Ok(fine.expectation);
    }
    let coarse = quadrature_expectation(spec, theta, level - 1, n_nodes)?;
    Ok(fine.expectation.iter().zip(&coarse.expectation).map(|(a, b)| a - b).collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MleResult {
    pub theta: f64,
    pub log_theta: f64,
    pub log_marginal: f64,
    /// `false` when the maximiser sits on the search boundary.
    pub interior: bool,
}

pub const MLE_LOG_BOUND: f64 = 10.0;
const MLE_TOL: f64 = 1e-10;

/// Maximiser of the toy log-marginal over `log θ ∈ [-10, 10]`: golden-section
/// search followed by bisection on the gradient sign.
pub fn mle_toy(cf: &ToyClosedForm) -> Result<MleResult> {
    let f = |xi: f64| cf.log_marginal(Theta::from_log(xi)?);
    let inv_phi = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (-MLE_LOG_BOUND, MLE_LOG_BOUND);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    while b - a > MLE_TOL {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d)?;
        }
    }
    let mut xi = 0.5 * (a + b);
    let interior = xi - (-MLE_LOG_BOUND) > 1e-6 && MLE_LOG_BOUND - xi > 1e-6;
    if interior {
        let grad = |x: f64| cf.grad_log_marginal(Theta::from_log(x)?);
        let (mut lo, mut hi) = (xi - 1e-3, xi + 1e-3);
        if grad(lo)? > 0.0 && grad(hi)? < 0.0 {
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if grad(mid)? > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo < 1e-15 {
                    break;
                }
            }
            xi = 0.5 * (lo + hi);
        }
    } else {
        log::warn!("toy maximum-likelihood estimate lies on the search boundary (log θ = {xi:.3})");
    }
    Ok(MleResult { theta: xi.exp(), log_theta: xi, log_marginal: f(xi)?, interior })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    // (x, erf x, erfc x) to 20 significant digits.
    const ERF_TABLE: [(f64, f64, f64); 20] = [
        (0.0, 0.0, 1.0),
        (1e-8, 1.1283791670955125599e-8, 0.99999998871620832904),
        (0.01, 0.011283415555849617151, 0.98871658444415038285),
        (0.1, 0.1124629160182848984, 0.8875370839817151016),
        (0.25, 0.27632639016823693299, 0.72367360983176306701),
        (0.5, 0.52049987781304653768, 0.47950012218695346232),
        (0.75, 0.7111556336535151316, 0.2888443663464848684),
        (1.0, 0.84270079294971486934, 0.15729920705028513066),
        (1.25, 0.92290012825645823014, 0.077099871743541769863),
        (1.5, 0.96610514647531072707, 0.033894853524689272933),
        (2.0, 0.99532226501895273416, 0.0046777349810472658379),
        (2.5, 0.99959304798255504106, 0.00040695201744495893956),
        (3.0, 0.99997790950300141456, 0.000022090496998585441373),
        (3.5, 0.99999925690162765859, 7.4309837234141274552e-7),
        (4.0, 0.99999998458274209972, 1.5417257900280018852e-8),
        (5.0, 0.99999999999846254021, 1.5374597944280348502e-12),
        (-0.3, -0.32862675945912741619, 1.3286267594591274162),
        (-1.7, -0.98379045859077456084, 1.9837904585907745608),
        (0.05, 0.056371977797016626955, 0.94362802220298337304),
        (6.0, 0.99999999999999997848, 2.1519736712498913117e-17),
    ];

    #[test]
    fn erf_matches_reference_table() {
        for (x, e, c) in ERF_TABLE {
            assert!((erf(x) - e).abs() <= 1e-12, "erf({x})");
            assert!(((erfc(x) - c) / c).abs() <= 1e-12, "erfc({x})");
        }
    }

    #[test]
    fn log_erfc_tail() {
        assert_relative_eq!(log_erfc(10.0), -102.87988902484488857, max_relative = 1e-14);
        assert_relative_eq!(log_erfc(30.0), -903.97411711064387808, max_relative = 1e-14);
        assert_relative_eq!(log_erfc(100.0), -10005.177585122664333, max_relative = 1e-14);
        assert_relative_eq!(log_erfc(-2.0), 0.69080557364658765676, max_relative = 1e-14);
        // both branches agree where they meet
        assert_relative_eq!(erfc(9.99).ln(), log_erfc(9.99), max_relative = 1e-13);
    }

    #[test]
    fn log_erf_diff_branches() {
        assert_relative_eq!(log_erf_diff(1.0, -0.5).unwrap(), (erf(1.0) - erf(-0.5)).ln(), max_relative = 1e-14);
        assert_relative_eq!(log_erf_diff(2.0, 1.0).unwrap(), (erf(2.0) - erf(1.0)).ln(), max_relative = 1e-12);
        assert_relative_eq!(log_erf_diff(-1.0, -2.0).unwrap(), log_erf_diff(2.0, 1.0).unwrap(), max_relative = 1e-14);
        // deep tail: erf(41) - erf(40) ≈ erfc(40)
        assert_relative_eq!(log_erf_diff(41.0, 40.0).unwrap(), log_erfc(40.0), max_relative = 1e-12);
        assert!(matches!(log_erf_diff(1.0, 1.0), Err(Error::LogDomain { .. })));
    }

    fn fixture() -> ToyClosedForm {
        ToyClosedForm::from_spec(&ModelSpec::toy_example().unwrap()).unwrap()
    }

    fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
        fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
            let (flm, frm) = (f(lm), f(rm));
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                return left + right + (left + right - whole) / 15.0;
            }
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
        let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
        rec(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol, 50)
    }

    /// `log ∫ γ(u, θ) du` by brute force, with the same dropped constant.
    fn brute_log_marginal(cf: &ToyClosedForm, t: f64) -> f64 {
        let lt = t.ln();
        let misfit =
            |u: f64| -> f64 { cf.g.iter().zip(&cf.y).map(|(g, y)| (u * g - y) * (u * g - y)).sum() };
        // shift by the minimum misfit over the box to keep the integrand O(1)
        let umin = cf.centre().clamp(-1.0, 1.0);
        let base = misfit(umin);
        let integral = adaptive_simpson(&|u| (-0.5 * t * (misfit(u) - base)).exp(), -1.0, 1.0, 1e-14);
        let log_gamma_part = (0.5 * cf.m() - 1.0) * lt - lt * lt / (2.0 * cf.prior_sigma.powi(2)) - 0.5 * t * base;
        // the closed form drops log √(π/2) - log ‖g‖ from completing the square
        log_gamma_part + integral.ln() - 0.5 * (PI / 2.0).ln() + cf.g_norm().ln()
    }

    #[test]
    fn closed_form_matches_numerical_integral() {
        let cf = fixture();
        for t in [0.5, 2.0, 7.0, 40.0] {
            let closed = cf.log_marginal(Theta::new(t).unwrap()).unwrap();
            let brute = brute_log_marginal(&cf, t);
            assert_relative_eq!(closed, brute, max_relative = 1e-8);
        }
    }

    #[test]
    fn gradient_matches_central_difference() {
        let cf = fixture();
        for t in [0.3, 2.0, 9.0] {
            let eps = 1e-6;
            let fd = (cf.log_marginal(Theta::new(t + eps).unwrap()).unwrap()
                - cf.log_marginal(Theta::new(t - eps).unwrap()).unwrap())
                / (2.0 * eps);
            assert_relative_eq!(cf.grad_log_marginal(Theta::new(t).unwrap()).unwrap(), fd, max_relative = 1e-6);
        }
    }

    #[test]
    fn symmetric_data_bracket() {
        let pts = crate::model::defaults::toy_points(10);
        let cf = ToyClosedForm::new(&pts, vec![0.0; 10], 1.0).unwrap();
        assert_eq!(cf.centre(), 0.0);
        let t: f64 = 3.0;
        let s = (0.5 * t).sqrt() * cf.g_norm();
        let expected = 3.5 * t.ln() - t.ln().powi(2) / 2.0 + (2.0 * erf(s)).ln();
        assert_relative_eq!(cf.log_marginal(Theta::new(t).unwrap()).unwrap(), expected, max_relative = 1e-14);
    }

    #[test]
    fn frozen_toy_fixture() {
        let cf = fixture();
        let t = Theta::new(2.0).unwrap();
        let lm = cf.log_marginal(t).unwrap();
        let g = cf.grad_log_marginal(t).unwrap();
        assert_relative_eq!(lm, -1.34191362082590420e1, max_relative = 1e-12);
        assert_relative_eq!(g, -3.21665069335299947e0, max_relative = 1e-12);
        assert_relative_eq!(mle_toy(&cf).unwrap().theta, 1.5809447582366205, max_relative = 1e-9);
    }

    #[test]
    fn mle_is_a_stationary_interior_maximum() {
        let cf = fixture();
        let mle = mle_toy(&cf).unwrap();
        assert!(mle.interior);
        let t = Theta::new(mle.theta).unwrap();
        assert!(cf.grad_log_marginal(t).unwrap().abs() < 1e-8);
        for f in [1.0 - 1e-3, 1.0 + 1e-3] {
            assert!(cf.log_marginal(Theta::new(mle.theta * f).unwrap()).unwrap() < mle.log_marginal);
        }
        assert!(mle.theta > 0.5 && mle.theta < 8.0, "θ̂ = {}", mle.theta);
    }

    #[test]
    fn mle_on_boundary_is_flagged() {
        // data equal to the noiseless model makes θ → ∞ preferred up to the prior
        let pts = crate::model::defaults::toy_points(50);
        let y: Vec<f64> = pts.iter().map(|x| 0.25 * (x * x - x)).collect();
        let cf = ToyClosedForm::new(&pts, y, 1e6).unwrap();
        let mle = mle_toy(&cf).unwrap();
        assert!(!mle.interior);
    }

    #[test]
    fn quadrature_normalises_and_matches_closed_form_ratio() {
        let spec = ModelSpec::toy_example().unwrap();
        let cf = ToyClosedForm::from_spec(&spec).unwrap();
        let level = 10;
        let r1 = quadrature_expectation(&spec, Theta::new(1.0).unwrap(), level, 16).unwrap();
        let r2 = quadrature_expectation(&spec, Theta::new(3.0).unwrap(), level, 16).unwrap();
        let c1 = cf.log_marginal(Theta::new(1.0).unwrap()).unwrap();
        let c2 = cf.log_marginal(Theta::new(3.0).unwrap()).unwrap();
        // differences in θ cancel the dropped constant; the FE error at l = 10 is tiny
        assert!(((r2.log_z - r1.log_z) - (c2 - c1)).abs() < 1e-4);
        let g = cf.grad_log_marginal(Theta::new(3.0).unwrap()).unwrap();
        assert!((r2.expectation[0] - g).abs() < 1e-3 * g.abs().max(1.0));
    }

    #[test]
    fn quadrature_of_general_model_converges() {
        let spec = ModelSpec::general_example().unwrap();
        let r = quadrature_expectation(&spec, Theta::new(0.3).unwrap(), 4, 8).unwrap();
        assert!(r.nodes <= 256 && r.expectation[0].is_finite());
        let inc = quadrature_increment(&spec, Theta::new(0.3).unwrap(), 4, 8).unwrap();
        assert!(inc[0].abs() < 1.0);
    }

    #[test]
    fn quadrature_rejects_bad_inputs() {
        let spec = ModelSpec::general(3, vec![0.0; 2]).unwrap();
        assert!(matches!(
            quadrature_expectation(&spec, Theta::new(1.0).unwrap(), 0, 8),
            Err(Error::QuadratureDimension(3))
        ));
        let spec = ModelSpec::general_example().unwrap();
        assert!(quadrature_expectation(&spec, Theta::new(1.0).unwrap(), 0, 4).is_err());
    }
}
