use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("covariance degenerate: regularization {epsilon:e} exceeds limit {limit:e}")]
    CovarianceDegenerate { epsilon: f64, limit: f64 },

    #[error("no variance: {0}")]
    NoVariance(String),

    #[error("divergence in parameter block `{block}`{context}")]
    Divergence { block: String, context: String },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("degenerate validation set: {0}")]
    DegenerateValidation(String),

    #[error("empty subset: {0}")]
    EmptySubset(String),

    #[error("artifact mismatch: {0}")]
    ArtifactMismatch(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attaches training position to a divergence error.
    pub(crate) fn with_context(self, ctx: impl AsRef<str>) -> Self {
        match self {
            Error::Divergence { block, context } => Error::Divergence {
                block,
                context: format!("{context} ({})", ctx.as_ref()),
            },
            other => other,
        }
    }

    /// Stable machine-readable category, used by the CLI for exit codes.
    pub fn category(&self) -> &'static str {
        match self {
            Error::DimensionMismatch(_) => "dimension",
            Error::NonFinite(_)
            | Error::CovarianceDegenerate { .. }
            | Error::NoVariance(_)
            | Error::Divergence { .. } => "numerical",
            Error::Parse { .. } | Error::Json(_) | Error::Csv(_) => "parse",
            Error::InvalidConfig(_) => "config",
            Error::DegenerateValidation(_) | Error::EmptySubset(_) => "data",
            Error::ArtifactMismatch(_) => "artifact",
            Error::Io { .. } => "io",
        }
    }
}
