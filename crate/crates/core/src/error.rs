use thiserror::Error;

/// Errors raised by the fusion library and the experiment harness.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("degenerate prior: theta = {0} must lie strictly inside (0, 1)")]
    DegeneratePrior(f64),

    #[error("indeterminate fusion: numerator and denominator are both zero")]
    IndeterminateFusion,

    #[error("{name} = {value} is not a probability in [0, 1]")]
    InvalidProbability { name: &'static str, value: f64 },

    #[error("{what} does not sum to 1 (sum = {sum})")]
    NotSimplex { what: String, sum: f64 },

    #[error("unknown combiner '{0}'")]
    UnknownCombiner(String),

    #[error("did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("invalid rectangle [{a_lo}, {a_hi}] x [{b_lo}, {b_hi}]")]
    InvalidRectangle {
        a_lo: f64,
        a_hi: f64,
        b_lo: f64,
        b_hi: f64,
    },

    #[error("empty ensemble")]
    EmptyEnsemble,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
