use thiserror::Error;

/// Errors produced anywhere in the fitting and testing pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("parameters outside the admissible space: {0}")]
    Validation(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("matrix is singular (condition number {condition:.3e})")]
    Singular { condition: f64 },

    #[error("estimation failed: {0}")]
    Estimation(String),
}

impl Error {
    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Input(_) | Error::Validation(_) | Error::Domain(_) => 1,
            Error::Numeric(_) | Error::Singular { .. } | Error::Estimation(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
