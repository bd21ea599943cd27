//! Run manifests: every command that writes artifacts records its exact
//! inputs, seeds, and outputs so the run can be reproduced bit for bit.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::io_util::{sha256_file, write_atomic};

#[derive(Serialize)]
pub struct ArtifactEntry {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

#[derive(Serialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub started_unix_seconds: u64,
    pub finished_unix_seconds: u64,
    /// Full parameter set needed to re-run the command.
    pub parameters: serde_json::Value,
    pub artifacts: Vec<ArtifactEntry>,
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn new(command: &str, started: u64, parameters: serde_json::Value) -> Self {
        RunManifest {
            tool_version: rtvar_core::TOOL_VERSION.to_string(),
            command: command.to_string(),
            started_unix_seconds: started,
            finished_unix_seconds: 0,
            parameters,
            artifacts: Vec::new(),
        }
    }

    pub fn add_artifact(&mut self, role: &str, path: &Path) -> anyhow::Result<()> {
        self.artifacts.push(ArtifactEntry {
            role: role.to_string(),
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    /// Finalize and write `<target>` atomically.
    pub fn write(mut self, target: &Path) -> anyhow::Result<()> {
        self.finished_unix_seconds = unix_now();
        let json = serde_json::to_string_pretty(&self)?;
        write_atomic(target, format!("{json}\n").as_bytes())
    }
}

/// Manifest path conventionally attached to an artifact file.
pub fn manifest_path_for(artifact: &Path) -> std::path::PathBuf {
    let mut name = artifact
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_else(|| "out".into());
    name.push(".manifest.json");
    artifact.with_file_name(name)
}
