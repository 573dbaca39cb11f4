use std::fmt;

use serde_json::json;

/// Failure classes with their process exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Invalid configuration or arguments; every problem found is listed.
    Config(Vec<String>),
    /// Input data could not be read or processed.
    Data(String),
    Internal(String),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(vec![msg.into()])
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Internal(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Data(_) => "data",
            CliError::Internal(_) => "internal",
        }
    }

    pub fn messages(&self) -> Vec<String> {
        match self {
            CliError::Config(m) => m.clone(),
            CliError::Data(m) | CliError::Internal(m) => vec![m.clone()],
        }
    }

    /// Machine-readable form written to stderr.
    pub fn to_json(&self) -> String {
        json!({
            "error": {
                "kind": self.kind(),
                "exit_code": self.exit_code(),
                "messages": self.messages(),
            }
        })
        .to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} error: {}", self.kind(), self.messages().join("; "))
    }
}

impl From<xsensor_core::Error> for CliError {
    fn from(e: xsensor_core::Error) -> Self {
        use xsensor_core::Error as E;
        match e {
            E::InvalidArgument(_) => CliError::Config(vec![e.to_string()]),
            E::Png(_) => CliError::Internal(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Internal(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
