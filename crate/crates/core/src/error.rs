use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid network: {0}")]
    InvalidSpec(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not Hermitian (defect {0:e})")]
    NotHermitian(f64),

    #[error("state vector is not normalized (norm {0})")]
    NotNormalized(f64),

    #[error("eigensolver failed to converge")]
    EigenFailure,

    #[error("sensitivity operator has imaginary residue {0:e}")]
    ImaginaryResidue(f64),

    #[error("sensitivity operator has zero norm")]
    ZeroSensitivityNorm,

    #[error("projection of the data operator vanishes; angles undefined")]
    ZeroProjection,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("every restart diverged; no controllers produced")]
    EmptyEnsemble,

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) | Error::Json(_) | Error::Csv(_) => 3,
            _ => 1,
        }
    }
}
