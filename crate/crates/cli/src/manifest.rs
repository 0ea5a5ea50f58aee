use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Record of one command invocation. `config` holds the fully resolved
/// arguments of the command, which is all `replay` needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    /// Output files, relative to the output directory.
    pub artifacts: Vec<String>,
    pub started_unix_ms: u128,
    /// Filled in when the command finishes.
    pub elapsed_secs: Option<f64>,
    pub status: String,
    pub library_version: String,
    pub cli_version: String,
}

/// Writes the manifest on creation and again, with timing and status, on
/// [`ManifestWriter::finish`].
pub struct ManifestWriter {
    path: PathBuf,
    started: Instant,
    pub manifest: RunManifest,
}

impl ManifestWriter {
    pub fn create<C: Serialize>(
        out_dir: &Path,
        command: &str,
        config: &C,
        seeds: Vec<u64>,
        artifacts: Vec<String>,
    ) -> CliResult<Self> {
        let started_unix_ms = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis())
            .unwrap_or(0);
        let w = Self {
            path: out_dir.join(MANIFEST_FILE),
            started: Instant::now(),
            manifest: RunManifest {
                command: command.to_string(),
                config: serde_json::to_value(config)?,
                seeds,
                artifacts,
                started_unix_ms,
                elapsed_secs: None,
                status: "running".into(),
                library_version: relgraph::VERSION.to_string(),
                cli_version: env!("CARGO_PKG_VERSION").to_string(),
            },
        };
        w.write()?;
        Ok(w)
    }

    fn write(&self) -> CliResult<()> {
        let text = serde_json::to_string_pretty(&self.manifest)?;
        std::fs::write(&self.path, text + "\n").map_err(CliError::io(&self.path))
    }

    pub fn finish<T>(mut self, result: &CliResult<T>) -> CliResult<()> {
        self.manifest.elapsed_secs = Some(self.started.elapsed().as_secs_f64());
        self.manifest.status = match result {
            Ok(_) => "ok".into(),
            Err(e) => format!("failed: {e}"),
        };
        self.write()
    }
}

pub fn read_manifest(path: &Path) -> CliResult<RunManifest> {
    let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
    Ok(serde_json::from_str(&text)?)
}
