use std::fmt;

/// Failure classes, mapped to process exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Invalid configuration or missing upstream artifact.
    #[error("{0}")]
    Config(String),
    /// A model failed numerically (divergence, non-finite output).
    #[error("{0}")]
    Numeric(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Other(_) => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Numeric(_) => "numeric",
            CliError::Other(_) => "io",
        }
    }

    /// One JSON line for machines.
    pub fn machine_line(&self) -> String {
        serde_json::json!({ "error": self.kind(), "message": self.to_string() }).to_string()
    }

    pub fn config(msg: impl fmt::Display) -> Self {
        CliError::Config(msg.to_string())
    }
}

impl From<dlnice_core::Error> for CliError {
    fn from(e: dlnice_core::Error) -> Self {
        use dlnice_core::Error as E;
        match e {
            E::NonFinite(_) | E::NoConvergence { .. } => CliError::Numeric(e.to_string()),
            E::Domain(_) | E::Parse { .. } | E::Shape(_) => CliError::Config(e.to_string()),
            E::Io(_) | E::Csv(_) | E::Json(_) => CliError::Other(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
