use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("I - U B is not invertible for experiment {experiment}")]
    NotWeaklyStable { experiment: String },

    #[error("no weakly stable model found after {attempts} attempts ({reason})")]
    GenerationFailed { attempts: usize, reason: String },

    #[error("singular covariance: {0}")]
    SingularCovariance(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("pair condition violated: no experiment intervenes on x{intervened} while observing x{observed}")]
    PairCondition { intervened: usize, observed: usize },

    #[error("missing observational experiment")]
    MissingObservational,

    #[error("missing total effect t(x{intervened} -> x{observed}) in experiment {experiment}")]
    MissingEffect {
        intervened: usize,
        observed: usize,
        experiment: usize,
    },

    #[error("backend failed on experiment {experiment}: {source}")]
    Backend {
        experiment: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("truth matrix has zero Frobenius norm")]
    ZeroTruth,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
