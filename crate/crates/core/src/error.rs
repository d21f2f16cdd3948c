use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("scale matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("mixture density underflowed to zero at observation {index}")]
    ZeroDensity { index: usize },

    #[error("quadrature did not converge (estimate {estimate}, error bound {error})")]
    QuadratureDiverged { estimate: f64, error: f64 },

    #[error("need more than {required} observations, found {found}")]
    TooFewObservations { required: usize, found: usize },

    #[error("all {restarts} EM chains failed ({last})")]
    AllChainsFailed { restarts: usize, last: String },

    #[error("shared covariance became singular during estimation")]
    SingularCovariance,

    #[error("unsupported density generator: {0}")]
    UnsupportedGenerator(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("{context}: {source}")]
    Csv {
        context: String,
        #[source]
        source: csv::Error,
    },

    #[error("malformed input: {0}")]
    Format(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
