use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("grid of {nodes} nodes exceeds the dense-factorization cap of {cap} nodes")]
    GridTooLarge { nodes: usize, cap: usize },

    #[error("{context}: matrix is not numerically positive definite ({detail})")]
    NotPositiveDefinite { context: &'static str, detail: String },

    #[error("position ({x}, {y}) lies outside the workspace")]
    OutsideWorkspace { x: f64, y: f64 },

    #[error("query at the base station position: log-distance is undefined")]
    AtBaseStation,

    #[error("path-loss regression is rank deficient: {0}")]
    RankDeficient(String),

    #[error("{module}: non-finite value at step {step}")]
    NonFinite { module: &'static str, step: usize },

    #[error("malformed {what} at line {line}: {reason}")]
    Parse {
        what: &'static str,
        line: usize,
        reason: String,
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

    /// True for failures of the numerics (as opposed to bad inputs or I/O).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. }
                | Error::RankDeficient(_)
                | Error::NonFinite { .. }
                | Error::GridTooLarge { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
