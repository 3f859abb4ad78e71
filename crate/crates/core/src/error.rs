use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value violates an operation's precondition.
    #[error("invalid {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("series of {0} terms did not converge within the term budget")]
    SeriesNotConverged(usize),

    #[error("integration failed at t={time}: {reason}")]
    IntegrationFailure { time: f64, reason: String },

    #[error("time ranges do not overlap")]
    DisjointRanges,

    #[error("histogram pool is empty")]
    EmptyPool,

    #[error("config error: {0}")]
    Config(String),

    #[error("run {run}: {source}")]
    Run {
        run: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// True for errors caused by bad input rather than a failed computation.
    /// Anything raised from inside a run counts as a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::InvalidParameter { .. } | Error::Config(_))
    }
}
