use std::path::{Path, PathBuf};

use serde_json::json;
use thiserror::Error;

use crate::config::ConfigIssue;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<ConfigIssue>),

    #[error("cannot parse configuration: {0}")]
    ConfigSyntax(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed results file: {message}")]
    Results { path: PathBuf, message: String },

    #[error("incompatible runs: {0}")]
    Incompatible(String),

    #[error("seed {seed}: {source}")]
    Seed {
        seed: u64,
        #[source]
        source: l3dmc_core::Error,
    },

    #[error(transparent)]
    Core(#[from] l3dmc_core::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Invalid(_) => "invalid_config",
            CliError::ConfigSyntax(_) => "config_syntax",
            CliError::Io { .. } => "io",
            CliError::Results { .. } => "results_format",
            CliError::Incompatible(_) => "incompatible_runs",
            CliError::Seed { .. } => "run_failed",
            CliError::Core(_) => "library",
        }
    }

    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) | CliError::ConfigSyntax(_) => 2,
            _ => 1,
        }
    }

    /// Machine-readable error record.
    pub fn to_json(&self) -> serde_json::Value {
        let mut v = json!({ "error": { "kind": self.kind(), "message": self.to_string() } });
        if let CliError::Invalid(issues) = self {
            v["error"]["issues"] = serde_json::to_value(issues).unwrap_or_default();
        }
        if let CliError::Seed { seed, .. } = self {
            v["error"]["seed"] = json!(seed);
        }
        v
    }
}
