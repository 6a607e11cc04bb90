use thiserror::Error;

/// Errors raised by the laboratory's numerical and simulation routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("x = {x} outside tabulated range [{lo}, {hi}]")]
    Range { x: f64, lo: f64, hi: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("fixed-point iteration did not converge at x = {x} (last iterate {last})")]
    NoConvergence { x: f64, last: f64 },

    #[error("parse error: {0}")]
    Parse(String),
}

impl LabError {
    /// Process exit code used by the command line runner.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Parse(_) => 1,
            LabError::Numeric(_) | LabError::NoConvergence { .. } => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
