use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::CliError;

/// Provenance record written next to every artifact a command produces.
#[derive(Debug, Clone, Serialize)]
pub struct RunMetadata {
    pub tool_version: String,
    pub command: String,
    pub argv: Vec<String>,
    pub config_precedence: String,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    /// Set when any input manifest is generated data.
    pub synthetic_data: bool,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

impl RunMetadata {
    pub fn start(command: &str) -> Self {
        Self {
            tool_version: reflect_core::VERSION.to_string(),
            command: command.to_string(),
            argv: std::env::args().collect(),
            config_precedence: crate::config::PRECEDENCE.to_string(),
            config: serde_json::Value::Null,
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            synthetic_data: false,
            started_unix_ms: now_ms(),
            finished_unix_ms: 0,
        }
    }

    pub fn config(&mut self, value: &impl Serialize) {
        self.config = serde_json::to_value(value).unwrap_or(serde_json::Value::Null);
    }

    pub fn input(&mut self, p: &Path) {
        self.inputs.push(p.display().to_string());
    }

    pub fn output(&mut self, p: &Path) {
        self.outputs.push(p.display().to_string());
    }

    /// Writes the record to `path` and returns it.
    pub fn finish(mut self, path: PathBuf) -> Result<PathBuf, CliError> {
        self.finished_unix_ms = now_ms();
        let text = serde_json::to_string_pretty(&self).expect("metadata serialises");
        std::fs::write(&path, text + "\n").map_err(|e| CliError::Io(path.clone(), e))?;
        Ok(path)
    }
}

/// `<file>.run.json` next to a single-file artifact.
pub fn sidecar(artifact: &Path) -> PathBuf {
    let mut name = artifact
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".run.json");
    artifact.with_file_name(name)
}
