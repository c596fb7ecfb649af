//! Piecewise-linear finite elements for the two-point boundary value problem
//!
//! ```text
//! -(û(x) p'(x))' = f(x),  x ∈ (0, 1),   p(0) = p(1) = 0
//! ```
//!
//! on the dyadic mesh of width `h = 2^{-l}`. The stiffness matrix is
//! tridiagonal and symmetric; it is solved with the Thomas algorithm.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Finest supported mesh level (`2^26 - 1` unknowns).
pub const MAX_MESH_LEVEL: u32 = 26;

/// Dyadic mesh level `l` with width `h = 2^{-l}` and `2^l - 1` interior nodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MeshLevel(u32);

impl MeshLevel {
    pub fn new(level: u32) -> Result<Self> {
        if level == 0 || level > MAX_MESH_LEVEL {
            return Err(Error::InvalidMeshLevel(level));
        }
        Ok(Self(level))
    }

    pub fn index(self) -> u32 {
        self.0
    }

    pub fn h(self) -> f64 {
        (-(self.0 as f64)).exp2()
    }

    /// `h^{-1}`, the cost of one solve in work units.
    pub fn inverse_width(self) -> u64 {
        1u64 << self.0
    }

    pub fn n_elements(self) -> usize {
        1usize << self.0
    }

    pub fn n_interior(self) -> usize {
        self.n_elements() - 1
    }

    /// Coordinate of node `i` (`0..=2^l`; interior nodes are `1..2^l`).
    pub fn node(self, i: usize) -> f64 {
        i as f64 * self.h()
    }

    pub fn finer(self) -> Result<Self> {
        Self::new(self.0 + 1)
    }
}

/// `k`-th basis function (1-based): `sin(kπx)` for odd `k`, `cos(kπx)` for even `k`.
pub fn basis(k: usize, x: f64) -> f64 {
    let arg = k as f64 * PI * x;
    if k % 2 == 1 {
        arg.sin()
    } else {
        arg.cos()
    }
}

fn basis_antiderivative(k: usize, x: f64) -> f64 {
    let kp = k as f64 * PI;
    if k % 2 == 1 {
        -(kp * x).cos() / kp
    } else {
        (kp * x).sin() / kp
    }
}

/// `û(x) = ū + Σ_k u_k σ_k φ_k(x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientField {
    pub mean: f64,
    pub amplitudes: Vec<f64>,
    pub coords: Vec<f64>,
}

impl CoefficientField {
    pub fn new(mean: f64, amplitudes: Vec<f64>, coords: Vec<f64>) -> Result<Self> {
        if amplitudes.len() != coords.len() {
            return Err(Error::DimensionMismatch {
                what: "coefficient coordinates",
                got: coords.len(),
                expected: amplitudes.len(),
            });
        }
        Ok(Self { mean, amplitudes, coords })
    }

    pub fn constant(value: f64) -> Self {
        Self { mean: value, amplitudes: Vec::new(), coords: Vec::new() }
    }

    pub fn value(&self, x: f64) -> f64 {
        self.mean
            + self
                .amplitudes
                .iter()
                .zip(&self.coords)
                .enumerate()
                .map(|(i, (s, u))| u * s * basis(i + 1, x))
                .sum::<f64>()
    }

    /// Exact mean of `û` over `[a, b]`.
    pub fn interval_mean(&self, a: f64, b: f64) -> f64 {
        let modes: f64 = self
            .amplitudes
            .iter()
            .zip(&self.coords)
            .enumerate()
            .map(|(i, (s, u))| u * s * (basis_antiderivative(i + 1, b) - basis_antiderivative(i + 1, a)))
            .sum();
        self.mean + modes / (b - a)
    }

    /// Uniform lower bound `ū - Σ σ_k` valid for every `u` in the prior box.
    pub fn uniform_lower_bound(&self) -> f64 {
        self.mean - self.amplitudes.iter().map(|s| s.abs()).sum::<f64>()
    }
}

/// `f(x) = intercept + slope · x`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineForcing {
    pub intercept: f64,
    pub slope: f64,
}

impl AffineForcing {
    pub fn new(intercept: f64, slope: f64) -> Self {
        Self { intercept, slope }
    }

    pub fn value(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }

    /// `⟨f, ψ_i⟩ = h · f(x_i)`, exact for affine `f` against hat functions.
    pub fn load_vector(&self, level: MeshLevel) -> Vec<f64> {
        let h = level.h();
        (1..=level.n_interior()).map(|i| h * self.value(level.node(i))).collect()
    }
}

/// How the element integrals `∫_e û` of the stiffness matrix are evaluated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum StiffnessQuadrature {
    /// Closed-form integrals of the sine/cosine expansion.
    #[default]
    Exact,
    /// Two-point Gauss–Legendre rule per element.
    GaussLegendre2,
}

const GAUSS2: [f64; 2] = [0.211_324_865_405_187_1, 0.788_675_134_594_812_9];

/// General tridiagonal system `sub_i x_{i-1} + diag_i x_i + sup_i x_{i+1} = rhs_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct TridiagonalSystem {
    pub sub: Vec<f64>,
    pub diag: Vec<f64>,
    pub sup: Vec<f64>,
    pub rhs: Vec<f64>,
}

impl TridiagonalSystem {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|i| {
                let mut v = self.diag[i] * x[i];
                if i > 0 {
                    v += self.sub[i - 1] * x[i - 1];
                }
                if i + 1 < n {
                    v += self.sup[i] * x[i + 1];
                }
                v
            })
            .collect()
    }

    pub fn residual_inf(&self, x: &[f64]) -> f64 {
        self.apply(x)
            .iter()
            .zip(&self.rhs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Thomas algorithm.
    pub fn solve(&self) -> Result<Vec<f64>> {
        let n = self.len();
        let mut c = vec![0.0; n];
        let mut x = vec![0.0; n];
        thomas(&self.sub, &self.diag, &self.sup, &self.rhs, &mut c, &mut x)?;
        Ok(x)
    }
}

fn thomas(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64], c: &mut [f64], x: &mut [f64]) -> Result<()> {
    let n = diag.len();
    if n == 0 {
        return Ok(());
    }
    let mut pivot = diag[0];
    if pivot == 0.0 || !pivot.is_finite() {
        return Err(Error::SingularSystem { row: 0 });
    }
    x[0] = rhs[0] / pivot;
    for i in 1..n {
        c[i - 1] = sup[i - 1] / pivot;
        pivot = diag[i] - sub[i - 1] * c[i - 1];
        if pivot == 0.0 || !pivot.is_finite() {
            return Err(Error::SingularSystem { row: i });
        }
        x[i] = (rhs[i] - sub[i - 1] * x[i - 1]) / pivot;
    }
    for i in (0..n - 1).rev() {
        x[i] -= c[i] * x[i + 1];
    }
    Ok(())
}

/// Stiffness matrix from per-element coefficient means `a_e = h^{-1}∫_e û`.
fn stiffness(level: MeshLevel, element_means: &[f64], rhs: Vec<f64>) -> TridiagonalSystem {
    let h = level.h();
    let n = level.n_interior();
    let diag = (0..n).map(|i| (element_means[i] + element_means[i + 1]) / h).collect();
    let off: Vec<f64> = (1..n).map(|i| -element_means[i] / h).collect();
    TridiagonalSystem { sub: off.clone(), diag, sup: off, rhs }
}

fn check_positive(coef: &CoefficientField, level: MeshLevel) -> Result<()> {
    let h = level.h();
    for e in 0..level.n_elements() {
        for g in GAUSS2 {
            let x = (e as f64 + g) * h;
            let v = coef.value(x);
            if v <= 0.0 || !v.is_finite() {
                return Err(Error::CoefficientNotPositive { x, value: v });
            }
        }
    }
    Ok(())
}

/// Assemble `A p = f` with exact element integrals.
pub fn assemble(coef: &CoefficientField, level: MeshLevel, forcing: AffineForcing) -> Result<TridiagonalSystem> {
    assemble_with(coef, level, forcing, StiffnessQuadrature::Exact)
}

pub fn assemble_with(
    coef: &CoefficientField,
    level: MeshLevel,
    forcing: AffineForcing,
    quadrature: StiffnessQuadrature,
) -> Result<TridiagonalSystem> {
    check_positive(coef, level)?;
    let h = level.h();
    let means: Vec<f64> = (0..level.n_elements())
        .map(|e| {
            let a = e as f64 * h;
            match quadrature {
                StiffnessQuadrature::Exact => coef.interval_mean(a, a + h),
                StiffnessQuadrature::GaussLegendre2 => {
                    0.5 * (coef.value(a + GAUSS2[0] * h) + coef.value(a + GAUSS2[1] * h))
                }
            }
        })
        .collect();
    Ok(stiffness(level, &means, forcing.load_vector(level)))
}

/// Nodal FEM solution with homogeneous Dirichlet boundary values.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardSolution {
    level: MeshLevel,
    nodal: Vec<f64>,
}

impl ForwardSolution {
    pub fn solve(level: MeshLevel, system: &TridiagonalSystem) -> Result<Self> {
        if system.len() != level.n_interior() {
            return Err(Error::DimensionMismatch {
                what: "tridiagonal system",
                got: system.len(),
                expected: level.n_interior(),
            });
        }
        Ok(Self { level, nodal: system.solve()? })
    }

    pub fn level(&self) -> MeshLevel {
        self.level
    }

    /// Interior nodal values `p_1, …, p_{2^l - 1}`.
    pub fn nodal(&self) -> &[f64] {
        &self.nodal
    }

    /// Piecewise-linear interpolant at `x ∈ [0, 1]`.
    pub fn eval(&self, x: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::OutsideDomain { x });
        }
        let (e, w) = locate(self.level, x);
        Ok(interpolate(&self.nodal, e, w))
    }
}

fn locate(level: MeshLevel, x: f64) -> (usize, f64) {
    let s = x * level.inverse_width() as f64;
    let e = (s.floor() as usize).min(level.n_elements() - 1);
    (e, s - e as f64)
}

/// Value on element `e` at local coordinate `w ∈ [0, 1]`.
fn interpolate(nodal: &[f64], e: usize, w: f64) -> f64 {
    let left = if e == 0 { 0.0 } else { nodal[e - 1] };
    let right = nodal.get(e).copied().unwrap_or(0.0);
    if w == 0.0 {
        left
    } else {
        (1.0 - w) * left + w * right
    }
}

fn check_points(points: &[f64]) -> Result<()> {
    match points.iter().find(|&&x| !(x > 0.0 && x < 1.0)) {
        Some(&x) => Err(Error::OutsideDomain { x }),
        None => Ok(()),
    }
}

/// `[p^l(x_1; u), …, p^l(x_M; u)]`.
pub fn observe(coef: &CoefficientField, level: MeshLevel, forcing: AffineForcing, points: &[f64]) -> Result<Vec<f64>> {
    check_points(points)?;
    let sol = ForwardSolution::solve(level, &assemble(coef, level, forcing)?)?;
    points.iter().map(|&x| sol.eval(x)).collect()
}

/// Parametric forward problem mapping a latent vector `u` to a PDE solve.
#[derive(Clone, Debug, PartialEq)]
pub enum ForwardModel {
    /// `-(û p')' = f` with `û = ū + Σ_k u_k σ_k φ_k`.
    Elliptic { mean: f64, amplitudes: Vec<f64>, forcing: AffineForcing },
    /// `p'' = u_1`, i.e. unit coefficient and forcing `-u_1`.
    Poisson,
}

impl ForwardModel {
    pub fn latent_dim(&self) -> usize {
        match self {
            ForwardModel::Elliptic { amplitudes, .. } => amplitudes.len(),
            ForwardModel::Poisson => 1,
        }
    }

    pub fn coefficient(&self, u: &[f64]) -> Result<CoefficientField> {
        match self {
            ForwardModel::Elliptic { mean, amplitudes, .. } => {
                CoefficientField::new(*mean, amplitudes.clone(), u.to_vec())
            }
            ForwardModel::Poisson => Ok(CoefficientField::constant(1.0)),
        }
    }

    pub fn forcing(&self, u: &[f64]) -> AffineForcing {
        match self {
            ForwardModel::Elliptic { forcing, .. } => *forcing,
            ForwardModel::Poisson => AffineForcing::new(-u[0], 0.0),
        }
    }
}

/// Per-level precomputation for repeated solves of a [`ForwardModel`] observed
/// at a fixed set of points: element integrals of every basis mode, basis
/// values at the two Gauss points of each element, the load vector and the
/// interpolation stencil of each observation point.
#[derive(Clone, Debug)]
pub struct LevelOperator {
    level: MeshLevel,
    model: ForwardModel,
    mode_means: Vec<Vec<f64>>,
    mode_gauss: Vec<Vec<f64>>,
    load: Vec<f64>,
    stencil: Vec<(usize, f64)>,
}

impl LevelOperator {
    pub fn new(model: &ForwardModel, level: MeshLevel, points: &[f64]) -> Result<Self> {
        check_points(points)?;
        let h = level.h();
        let ne = level.n_elements();
        let (mode_means, mode_gauss, load) = match model {
            ForwardModel::Elliptic { amplitudes, forcing, .. } => {
                let means = amplitudes
                    .iter()
                    .enumerate()
                    .map(|(i, s)| {
                        let k = i + 1;
                        (0..ne)
                            .map(|e| {
                                let a = e as f64 * h;
                                s * (basis_antiderivative(k, a + h) - basis_antiderivative(k, a)) / h
                            })
                            .collect()
                    })
                    .collect();
                let gauss = amplitudes
                    .iter()
                    .enumerate()
                    .map(|(i, s)| {
                        (0..ne)
                            .flat_map(|e| GAUSS2.map(|g| s * basis(i + 1, (e as f64 + g) * h)))
                            .collect()
                    })
                    .collect();
                (means, gauss, forcing.load_vector(level))
            }
            ForwardModel::Poisson => (Vec::new(), Vec::new(), vec![h; level.n_interior()]),
        };
        Ok(Self {
            level,
            model: model.clone(),
            mode_means,
            mode_gauss,
            load,
            stencil: points.iter().map(|&x| locate(level, x)).collect(),
        })
    }

    pub fn level(&self) -> MeshLevel {
        self.level
    }

    /// Nodal solution for latent vector `u`.
    pub fn solve(&self, u: &[f64]) -> Result<Vec<f64>> {
        let expected = self.model.latent_dim();
        if u.len() != expected {
            return Err(Error::DimensionMismatch { what: "latent vector", got: u.len(), expected });
        }
        let n = self.level.n_interior();
        let ne = self.level.n_elements();
        let h = self.level.h();
        let (means, rhs) = match &self.model {
            ForwardModel::Elliptic { mean, .. } => {
                let mut gauss = vec![*mean; 2 * ne];
                for (modes, uk) in self.mode_gauss.iter().zip(u) {
                    for (g, m) in gauss.iter_mut().zip(modes) {
                        *g += uk * m;
                    }
                }
                if let Some(i) = gauss.iter().position(|&v| v <= 0.0 || !v.is_finite()) {
                    return Err(Error::CoefficientNotPositive {
                        x: ((i / 2) as f64 + GAUSS2[i % 2]) * h,
                        value: gauss[i],
                    });
                }
                let mut means = vec![*mean; ne];
                for (modes, uk) in self.mode_means.iter().zip(u) {
                    for (a, m) in means.iter_mut().zip(modes) {
                        *a += uk * m;
                    }
                }
                (means, self.load.clone())
            }
            ForwardModel::Poisson => (vec![1.0; ne], self.load.iter().map(|l| -u[0] * l).collect()),
        };
        let diag: Vec<f64> = (0..n).map(|i| (means[i] + means[i + 1]) / h).collect();
        let off: Vec<f64> = (1..n).map(|i| -means[i] / h).collect();
        let mut c = vec![0.0; n];
        let mut x = vec![0.0; n];
        thomas(&off, &diag, &off, &rhs, &mut c, &mut x)?;
        Ok(x)
    }

    /// Observation vector `G^l(u)`: one tridiagonal solve plus interpolation.
    pub fn observe(&self, u: &[f64]) -> Result<Vec<f64>> {
        let nodal = self.solve(u)?;
        Ok(self.stencil.iter().map(|&(e, w)| interpolate(&nodal, e, w)).collect())
    }
}
