//! Error categories and their process exit codes.

use std::path::Path;

use crate::protocol::ProtocolError;

/// Exit codes: 0 ok, 2 config, 3 data, 4 numeric failure, 5 enhancer protocol.
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;
pub const EXIT_PROTOCOL: i32 = 5;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => EXIT_CONFIG,
            RunError::Data(_) => EXIT_DATA,
            RunError::Numeric(_) => EXIT_NUMERIC,
            RunError::Protocol(_) => EXIT_PROTOCOL,
        }
    }

    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        RunError::Data(format!("{}: {e}", path.display()))
    }
}

impl From<dynsplat_core::Error> for RunError {
    fn from(e: dynsplat_core::Error) -> Self {
        use dynsplat_core::Error as E;
        match e {
            E::NonFiniteGradient { .. } | E::NonFiniteLoss { .. } => RunError::Numeric(e.to_string()),
            E::Enhancer(msg) => RunError::Protocol(ProtocolError::Responder(msg)),
            other => RunError::Data(other.to_string()),
        }
    }
}

pub type Result<T, E = RunError> = std::result::Result<T, E>;
