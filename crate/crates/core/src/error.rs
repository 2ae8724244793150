use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation (negative time,
    /// reversed interval, ...).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid path: {0}")]
    InvalidPath(String),

    #[error("invalid cohort: {0}")]
    InvalidCohort(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// The hazard model cannot generate data, e.g. a negative additive hazard.
    #[error("model violation: {0}")]
    ModelViolation(String),

    #[error("empty weighted risk set at t = {t}")]
    EmptyRiskSet { t: f64 },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("Newton iteration did not converge in {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        iterations: usize,
        theta: Vec<f64>,
        residual: f64,
    },

    /// The estimate ran off to infinity: the estimating function has no finite
    /// root (monotone likelihood / separation).
    #[error("estimate diverged after {iterations} iterations (theta = {theta:?})")]
    Divergence { iterations: usize, theta: Vec<f64> },

    #[error("parse error at record {record}: {msg}")]
    Parse { record: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
