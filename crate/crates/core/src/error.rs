use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("diffusion coefficient is not positive: û({x}) = {value}")]
    CoefficientNotPositive { x: f64, value: f64 },

    #[error("singular tridiagonal system: zero pivot at row {row}")]
    SingularSystem { row: usize },

    #[error("point {x} is outside the open interval (0, 1)")]
    OutsideDomain { x: f64 },

    #[error("mesh level {0} is not supported (expected 1..={max})", max = crate::pde::MAX_MESH_LEVEL)]
    InvalidMeshLevel(u32),

    #[error("precision parameter must be positive and finite, got {0}")]
    InvalidTheta(f64),

    #[error("dimension mismatch: {what} has length {got}, expected {expected}")]
    DimensionMismatch { what: &'static str, got: usize, expected: usize },

    #[error("all importance weights are numerically zero during level-0 initialisation")]
    DegenerateInitialization,

    #[error("all resampling potentials are numerically zero at level {level}")]
    WeightDegeneracy { level: usize },

    #[error("while building increments for (l = {level}, p = {p}): {source}")]
    Increment {
        level: usize,
        p: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("sampled level {level} exceeds the safety cap {cap}")]
    LevelCapExceeded { level: usize, cap: usize },

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("erf difference underflows in log domain: erf({a}) - erf({b})")]
    LogDomain { a: f64, b: f64 },

    #[error("tensor quadrature did not converge up to {nodes} nodes per dimension")]
    QuadratureFailed { nodes: usize },

    #[error("quadrature oracle supports at most 2 latent dimensions, got {0}")]
    QuadratureDimension(usize),

    #[error("SGD iterate became non-finite at iteration {iteration}")]
    Divergence { iteration: usize },
}
