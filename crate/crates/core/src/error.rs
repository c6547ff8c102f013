use thiserror::Error;

/// Errors produced by the fitting, scoring and testing pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid data: {0}")]
    Data(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("marginal covariance of cluster `{cluster}` is not positive definite")]
    SingularCluster { cluster: String },

    #[error("fixed-effect design matrix is rank deficient (condition estimate {condition:e})")]
    RankDeficient { condition: f64 },

    #[error("information matrix is not positive definite (smallest eigenvalue {smallest:e})")]
    InfoNotPositiveDefinite { smallest: f64 },

    #[error("parameter `{name}` is estimated on the boundary of the parameter space; score-based tests assume an interior optimum")]
    Boundary { name: String },

    #[error("fit has not converged")]
    NotConverged,

    #[error("index {index} out of range 1..={n}")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("non-finite auxiliary value at row {row}")]
    NonFiniteAuxiliary { row: usize },

    #[error("need at least {required} observations, got {n}")]
    TooFewObservations { n: usize, required: usize },

    #[error("self-normalizer is singular at every admissible split point")]
    AllSplitsSingular,

    #[error("null table has no stored samples; regenerate it with samples retained")]
    NoStoredSamples,

    #[error("power study failed: {0}")]
    Study(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
