use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    /// The state left (or touched) the open safe set.
    #[error("state outside safe set: coordinate {index} = {value} with bound {bound}")]
    OutsideSafeSet { index: usize, value: f64, bound: f64 },

    #[error("mass matrix is singular or ill-conditioned (condition number {condition:e})")]
    SingularMassMatrix { condition: f64 },

    #[error("covariance matrix lost positive definiteness at t = {t}")]
    CovarianceNotPositiveDefinite { t: f64 },

    #[error("projection precondition violated for {what}: norm {norm} exceeds {limit}")]
    ProjectionEscaped { what: &'static str, norm: f64, limit: f64 },

    #[error("degenerate kernel: sampled lambda_min(R_g) = {lambda_min:e} < 1e-10")]
    DegenerateKernel { lambda_min: f64 },

    #[error("non-finite value at t = {t}\nlast records:\n{dump}")]
    NonFinite { t: f64, dump: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error at key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}

pub(crate) fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        })
    }
}
