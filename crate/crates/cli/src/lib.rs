//! Pipeline orchestration and command implementations behind the
//! `steerlab` binary.

pub mod commands;
pub mod manifest;
pub mod pipeline;

use std::fmt;

/// Command failure with its process exit code: 2 usage (clap's own), 3
/// missing/invalid stage dependency, 4 runtime.
#[derive(Debug)]
pub struct CliError {
    pub kind: CliErrorKind,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CliErrorKind {
    Dependency,
    Runtime,
}

impl CliError {
    pub fn dependency(message: impl Into<String>) -> Self {
        Self {
            kind: CliErrorKind::Dependency,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self {
            kind: CliErrorKind::Runtime,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            CliErrorKind::Dependency => 3,
            CliErrorKind::Runtime => 4,
        }
    }

    /// Machine-readable error envelope printed to stderr.
    pub fn to_json(&self) -> String {
        serde_json::json!({
            "error": {
                "kind": match self.kind {
                    CliErrorKind::Dependency => "dependency",
                    CliErrorKind::Runtime => "runtime",
                },
                "message": self.message,
                "exit_code": self.exit_code(),
            }
        })
        .to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.message)
    }
}

impl std::error::Error for CliError {}

impl From<steerlab_core::Error> for CliError {
    fn from(e: steerlab_core::Error) -> Self {
        CliError::runtime(e.to_string())
    }
}

impl From<steerlab_judge::JudgeError> for CliError {
    fn from(e: steerlab_judge::JudgeError) -> Self {
        CliError::runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::runtime(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::runtime(e.to_string())
    }
}
