//! File formats and the command layer behind the `nvmag` binary.

mod commands;
mod config;
mod table;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use commands::{
    cmd_fit_decay, cmd_fit_odmr, cmd_fit_saturation, cmd_reconstruct, cmd_sensitivity,
    cmd_simulate_decay, cmd_simulate_odmr, truth_path, CommandOutput, Status,
};
pub use config::{
    DecaySimConfig, FitConfig, GridConfig, ModelConfig, PathsConfig, RunConfig, SimulateConfig,
};
pub use table::{
    read_decay, read_decay_file, read_odmr, read_odmr_file, read_saturation, read_saturation_file,
    write_decay, write_decay_file, write_odmr, write_odmr_file, write_plot, write_plot_file,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IoError {
    #[error("{0}")]
    Io(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("bad header: expected '{expected}', found '{found}'")]
    Header { expected: String, found: String },
    #[error("row {line}: {message}")]
    Row { line: u64, message: String },
    #[error("file has no data rows")]
    Empty,
    #[error("invalid data: {0}")]
    Data(String),
    #[error("{path}: {source}")]
    InFile { path: String, source: Box<IoError> },
}

impl IoError {
    pub(crate) fn in_file(self, path: &Path) -> IoError {
        IoError::InFile {
            path: path.display().to_string(),
            source: Box::new(self),
        }
    }
}

/// Machine-readable output of every command. Keys carry their units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultDocument {
    pub schema_version: u32,
    pub command: String,
    pub status: Status,
    pub config: serde_json::Value,
    pub results: serde_json::Value,
    pub warnings: Vec<String>,
}

impl ResultDocument {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            command: command.to_string(),
            status: Status::Ok,
            config: serde_json::to_value(config).unwrap_or(serde_json::Value::Null),
            results: serde_json::Value::Null,
            warnings: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        // Value trees of plain data always serialize.
        serde_json::to_string_pretty(self).unwrap_or_else(|e| format!("{{\"error\": \"{e}\"}}"))
    }
}
