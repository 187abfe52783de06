use thiserror::Error;

/// Errors raised by the numerical pipeline.
///
/// Validation problems are not errors: [`crate::netmodel::validate_case`]
/// returns them as diagnostics. The variants here are failures that stop a
/// computation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid case: {0}")]
    Structural(String),

    #[error("power flow diverged after {iterations} iterations (mismatch {mismatch:.3e} pu)")]
    Diverged { iterations: usize, mismatch: f64 },

    #[error("singular matrix in {context} (condition estimate {condition:.3e})")]
    Singular { context: String, condition: f64 },

    #[error("{context}: expansion did not converge in {terms} terms (residual {residual:.3e})")]
    Expansion { context: String, terms: usize, residual: f64 },

    #[error("wind farm at bus {bus}: {reason}")]
    Wind { bus: usize, reason: String },

    #[error("{0}")]
    Domain(String),

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
