//! Per-command manifests. The manifest itself is deterministic; wall-clock
//! times go to a separate `<command>.time.json` next to it.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;
use crate::error::CliError;

pub const MANIFEST_DIR: &str = "manifests";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_sha256: String,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    /// Paths relative to the output directory.
    pub artifacts: Vec<FileDigest>,
    pub versions: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::data(format!("cannot hash {}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

fn shown(path: &Path) -> String {
    path.to_string_lossy().replace('\\', "/")
}

pub fn versions() -> BTreeMap<String, String> {
    BTreeMap::from([
        ("regrank".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ("sparse_snapshot".to_string(), regrank::sparse::SNAPSHOT_VERSION.to_string()),
        ("protocol".to_string(), regrank::gateway::PROTOCOL_VERSION.to_string()),
        ("answer_prompt".to_string(), regrank::answer::ANSWER_PROMPT_VERSION.to_string()),
    ])
}

/// Collects inputs and artifacts for one command run.
#[derive(Debug, Default)]
pub struct Recorder {
    /// (file on disk, path shown in the manifest)
    inputs: Vec<(PathBuf, String)>,
    artifacts: Vec<PathBuf>,
}

impl Recorder {
    pub fn input(&mut self, path: &Path) {
        self.input_as(path, shown(path));
    }

    /// An input shown under a stable name, such as one inside the output directory.
    pub fn input_as(&mut self, path: &Path, name: String) {
        if !self.inputs.iter().any(|(p, _)| p == path) {
            self.inputs.push((path.to_path_buf(), name));
        }
    }

    /// `path` is relative to the output directory.
    pub fn artifact(&mut self, path: impl Into<PathBuf>) {
        let path = path.into();
        if !self.artifacts.contains(&path) {
            self.artifacts.push(path);
        }
    }

    pub fn write(self, command: &str, config: &PipelineConfig, started: SystemTime) -> Result<PathBuf, CliError> {
        let digest = |p: &Path, name: String| -> Result<FileDigest, CliError> {
            Ok(FileDigest { path: name, sha256: sha256_file(p)? })
        };
        let inputs = self.inputs.iter().map(|(p, name)| digest(p, name.clone())).collect::<Result<Vec<_>, _>>()?;
        let mut artifacts =
            self.artifacts.iter().map(|p| digest(&config.out.join(p), shown(p))).collect::<Result<Vec<_>, _>>()?;
        artifacts.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = Manifest {
            command: command.to_string(),
            config_sha256: config.hash(),
            config: config.hashed_view(),
            inputs,
            artifacts,
            versions: versions(),
        };
        let dir = config.out.join(MANIFEST_DIR);
        std::fs::create_dir_all(&dir)?;
        let path = dir.join(format!("{command}.json"));
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
        let secs = |t: SystemTime| t.duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
        let times = serde_json::json!({ "started_unix": secs(started), "finished_unix": secs(SystemTime::now()) });
        std::fs::write(dir.join(format!("{command}.time.json")), serde_json::to_string_pretty(&times)? + "\n")?;
        Ok(path)
    }
}
