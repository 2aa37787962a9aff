use std::path::PathBuf;

use arscene_core::config::ConfigError;
use arscene_core::eval::EvalError;
use arscene_core::ingest::IngestError;
use arscene_core::session::SessionError;

/// Failures mapped to exit codes: 1 for bad input, 2 when an external
/// backend is down.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Port(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Port(_) => 2,
            _ => 1,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Validation(_) => "validation",
            CliError::Port(_) => "port-unavailable",
            CliError::Io { .. } => "io",
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "error": self.code(),
            "message": self.to_string(),
            "exit_code": self.exit_code(),
        })
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Embed(_) => CliError::Port(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<SessionError> for CliError {
    fn from(e: SessionError) -> Self {
        if e.is_port_failure() {
            CliError::Port(e.to_string())
        } else {
            CliError::Validation(e.to_string())
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Validation(e.to_string())
    }
}
