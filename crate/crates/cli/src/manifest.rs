//! Run manifest: written before a command starts and finalized after it ends.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, Seeds};
use crate::error::CliError;

/// Version of the CSV layouts written by every command.
pub const CSV_SCHEMA_VERSION: u32 = 1;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    /// Started and not finalized; a crash leaves the manifest in this state.
    Running,
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub status: RunStatus,
    pub version: String,
    pub revision: String,
    pub seeds: Seeds,
    pub csv_schema: u32,
    pub config: RunConfig,
    pub outputs: Vec<PathBuf>,
    pub started_unix: u64,
    pub wall_clock_secs: Option<f64>,
    pub error: Option<String>,
}

fn revision() -> String {
    Command::new("git")
        .args(["rev-parse", "--short", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

/// An open manifest that tracks one command's outputs.
#[derive(Debug)]
pub struct ManifestGuard {
    path: PathBuf,
    manifest: RunManifest,
    started: Instant,
}

impl ManifestGuard {
    /// Creates the output directory and writes a `running` manifest into it.
    pub fn begin(out: &Path, command: &str, config: &RunConfig) -> Result<Self, CliError> {
        std::fs::create_dir_all(out)?;
        let manifest = RunManifest {
            command: command.to_string(),
            status: RunStatus::Running,
            version: env!("CARGO_PKG_VERSION").to_string(),
            revision: revision(),
            seeds: config.seeds.clone(),
            csv_schema: CSV_SCHEMA_VERSION,
            config: config.clone(),
            outputs: Vec::new(),
            started_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            wall_clock_secs: None,
            error: None,
        };
        let guard = Self {
            path: out.join(MANIFEST_FILE),
            manifest,
            started: Instant::now(),
        };
        guard.write()?;
        Ok(guard)
    }

    fn write(&self) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(&self.manifest)?;
        std::fs::write(&self.path, text + "\n")?;
        Ok(())
    }

    pub fn record_output(&mut self, path: &Path) {
        if !self.manifest.outputs.iter().any(|p| p == path) {
            self.manifest.outputs.push(path.to_path_buf());
        }
    }

    /// Marks the run complete or failed and rewrites the manifest.
    pub fn finish<T>(mut self, result: Result<T, CliError>) -> Result<T, CliError> {
        self.manifest.wall_clock_secs = Some(self.started.elapsed().as_secs_f64());
        match &result {
            Ok(_) => self.manifest.status = RunStatus::Complete,
            Err(e) => {
                self.manifest.status = RunStatus::Failed;
                self.manifest.error = Some(e.to_string());
            }
        }
        self.write()?;
        result
    }
}

pub fn read_manifest(out: &Path) -> Result<RunManifest, CliError> {
    let text = std::fs::read_to_string(out.join(MANIFEST_FILE))?;
    Ok(serde_json::from_str(&text)?)
}
