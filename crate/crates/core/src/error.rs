use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("singular covariates: {0}")]
    SingularCovariates(String),

    #[error("invalid treated-arm size n1={n1} for n={n} (need 2 <= n1 <= n-2)")]
    InvalidArm { n: usize, n1: usize },

    #[error("arm too small: n1={n1}, n0={n0}, need at least K+2={min} units per arm")]
    ArmTooSmall { n1: usize, n0: usize, min: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("unit mismatch: {0}")]
    UnitMismatch(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("config error at {field}: {msg}")]
    Config { field: String, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable process exit code per error class, used by the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::SingularCovariates(_) => 3,
            Error::InvalidArm { .. } => 4,
            Error::ArmTooSmall { .. } => 5,
            Error::Domain(_) => 6,
            Error::UnitMismatch(_) => 7,
            Error::Invalid(_) | Error::Config { .. } => 8,
            Error::Parse { .. } | Error::Csv(_) => 9,
            Error::Io(_) | Error::Json(_) => 10,
        }
    }
}
