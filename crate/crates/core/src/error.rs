use thiserror::Error;

/// Errors raised by the numerical operations of this crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum IfsError {
    #[error("point {x} lies outside the domain [-1, 1)")]
    Domain { x: f64 },

    #[error("noise value {noise} outside the admissible interval [{lo}, {hi}]")]
    NoiseOutOfRange { noise: f64, lo: f64, hi: f64 },

    #[error("map {index} is not affine; the additive-ratio model and condition (a1) need affine maps")]
    NotAffine { index: usize },

    #[error("malformed system: {0}")]
    Malformed(String),

    #[error("hypothesis failed: {0}")]
    Hypothesis(String),

    #[error("epsilon {epsilon} outside the admissible range ({reason})")]
    EpsilonOutOfRange { epsilon: f64, reason: String },

    #[error("partition depth m = {m} too small: {reason}")]
    DepthTooSmall { m: u32, reason: String },

    #[error("recursion factor not contracting: b = {b}")]
    NotContracting { b: f64 },

    #[error("non-positive constant {name} = {value}")]
    NonPositiveConstant { name: &'static str, value: f64 },

    #[error("orbit escaped [-1, 1): value {value} at step {step}")]
    Escape { value: f64, step: usize },

    #[error("Lyapunov exponent estimate {chi} is not negative")]
    NotContractingOnAverage { chi: f64 },

    #[error("point within {tol:e} of a partition boundary")]
    BoundaryPoint { tol: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(&'static str),
}

pub type Result<T> = std::result::Result<T, IfsError>;
