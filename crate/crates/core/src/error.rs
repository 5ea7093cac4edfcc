use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: missing column `{0}`")]
    MissingColumn(String),

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("provenance error: {0}")]
    Provenance(String),

    #[error("infeasible sensitivity parameter rho = {rho}: {message}")]
    Infeasible { rho: f64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::MissingColumn(_) | Error::Parse { .. } | Error::Validation(_) => 3,
            Error::Provenance(_) | Error::Csv(_) | Error::Json(_) => 3,
            Error::Numerical(_) | Error::Infeasible { .. } => 4,
            Error::Io(_) => 2,
        }
    }
}
