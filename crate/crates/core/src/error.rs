use std::path::PathBuf;

use thiserror::Error;

use crate::llm::GatewayError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("plan step {step}: column `{column}`: {reason}")]
    PlanStep {
        step: usize,
        column: String,
        reason: String,
    },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("advisor response rejected: {0}")]
    AdvisorResponse(String),

    #[error(transparent)]
    Gateway(#[from] GatewayError),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse failure classes, used for CLI diagnostics and exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Parse,
    Transport,
    Numeric,
    Io,
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Parse { .. } | Error::Json(_) | Error::AdvisorResponse(_) => ErrorClass::Parse,
            Error::InvalidArgument(_)
            | Error::UnknownColumn(_)
            | Error::PlanStep { .. }
            | Error::Schema(_) => ErrorClass::Config,
            Error::Dimension { .. } | Error::Numeric(_) => ErrorClass::Numeric,
            Error::Gateway(g) => match g {
                GatewayError::Configuration(_) => ErrorClass::Config,
                _ => ErrorClass::Transport,
            },
            Error::Io { .. } => ErrorClass::Io,
        }
    }
}
