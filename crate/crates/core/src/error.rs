use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Inputs outside the model's domain (e.g. `L > D`, `k` not dividing `D`).
    #[error("domain violation: {0}")]
    Domain(String),

    #[error("at grid point k={k}, L={leak_size}: {source}")]
    GridPoint {
        k: u64,
        leak_size: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("threshold {threshold} is unreachable; best achievable probability is {best} at k={best_k}")]
    Unreachable { threshold: f64, best: f64, best_k: u64 },

    #[error("unknown figure `{0}` (expected one of fig2, fig3a, fig3b, fig4a, fig4b, fig5)")]
    UnknownFigure(String),

    #[error("row {row}: {message}")]
    MalformedRow { row: u64, message: String },

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("empty input")]
    EmptyInput,

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("cannot generalize `{value}` in column `{column}`: {reason}")]
    Generalize {
        column: String,
        value: String,
        reason: String,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// True for errors caused by parameters the model rejects, as opposed to
    /// malformed input files or I/O failures.
    pub fn is_domain_violation(&self) -> bool {
        matches!(
            self,
            Error::Domain(_) | Error::GridPoint { .. } | Error::Unreachable { .. } | Error::UnknownFigure(_)
        )
    }
}
