use thiserror::Error;

/// Errors raised by model evaluation, smoothing and estimation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Σ(v) = σ(v)σ(v)ᵀ failed the positive-definiteness check.
    #[error("diffusion covariance is not positive definite at state {state:?}")]
    DiffusionDegeneracy { state: Vec<f64> },

    /// Bridging needs a square, invertible σ.
    #[error("bridge maps need dim_w == dim_x (got dim_x = {dim_x}, dim_w = {dim_w})")]
    NonSquareDiffusion { dim_x: usize, dim_w: usize },

    #[error("jump count {count} exceeds the configured cap of {cap}")]
    JumpOverflow { count: usize, cap: usize },

    #[error("all initial particle weights are zero")]
    DegenerateInitialization,

    #[error("all particle weights vanished at step {step}")]
    ParticleCollapse { step: usize },

    #[error("non-finite transition density at step {step} for particle pair (new {new}, previous {previous})")]
    NonFiniteDensity {
        step: usize,
        new: usize,
        previous: usize,
    },

    /// A density evaluated to NaN or ±∞.
    #[error("non-finite density: {0}")]
    NonFiniteValue(String),

    #[error("non-finite gradient in parameter coordinate {coordinate}")]
    NonFiniteGradient { coordinate: usize },

    #[error("parameter iterate diverged at step {step}: coordinate {coordinate} reached {value}")]
    Divergence {
        step: usize,
        coordinate: usize,
        value: f64,
    },

    #[error("parameter {theta:?} is not admissible for model {model}: {reason}")]
    InadmissibleParameter {
        model: String,
        theta: Vec<f64>,
        reason: String,
    },

    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("observation streams differ in length ({left} vs {right})")]
    StreamLengthMismatch { left: usize, right: usize },

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("innovation variance is not positive at observation {index}")]
    NonPositiveInnovation { index: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
