//! Crate-wide error type.

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller-supplied value is outside its documented domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Input data is structurally valid but unusable (empty set, zero-extent
    /// bounding box, degenerate mesh, ...).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// Malformed input document. `line` is 1-based; binary formats report the
    /// line of the last header row they understood.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Floating-point trouble that is not the optimizer's normal business,
    /// such as non-finite residuals at the evaluation point.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The damped least-squares solver ran out of road: every step was
    /// rejected until the damping factor exceeded its ceiling. `best_params`
    /// holds the best parameter vector seen before giving up.
    #[error("optimization failed: damping exceeded {lambda_limit:e} after {iterations} iterations (best energy {best_energy:e})")]
    OptimizationFailed {
        best_params: Vec<f64>,
        best_energy: f64,
        iterations: usize,
        lambda_limit: f64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Error {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }
}
