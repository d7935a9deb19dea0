//! Run manifests: what went in, what came out and when.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::io::{sha256_file, write_atomic};

pub const RUN_MANIFEST: &str = "run_manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: u64,
    /// Milliseconds since the Unix epoch.
    pub started: u64,
    pub finished: Option<u64>,
    pub inputs: BTreeMap<String, FileDigest>,
    /// Relative to the output directory.
    pub outputs: Vec<String>,
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

impl RunManifest {
    /// Digests every input before any work starts.
    pub fn begin(command: &str, config: &impl Serialize, seed: u64, inputs: &[(&str, &Path)]) -> Result<Self> {
        let mut digests = BTreeMap::new();
        for (role, path) in inputs {
            let abs = fs::canonicalize(path).map_err(CliError::io(*path))?;
            let sha256 = sha256_file(&abs)?;
            digests.insert(role.to_string(), FileDigest { path: abs, sha256 });
        }
        Ok(Self {
            command: command.into(),
            config: serde_json::to_value(config)?,
            seed,
            started: now_ms(),
            finished: None,
            inputs: digests,
            outputs: Vec::new(),
        })
    }

    pub fn finish(mut self, dir: &Path, mut outputs: Vec<String>) -> Result<Self> {
        outputs.sort();
        self.outputs = outputs;
        self.finished = Some(now_ms());
        write_atomic(&dir.join(RUN_MANIFEST), &serde_json::to_vec_pretty(&self)?)?;
        Ok(self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(CliError::io(path))?;
        serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
    }

    pub fn input(&self, role: &str) -> Option<&Path> {
        self.inputs.get(role).map(|d| d.path.as_path())
    }

    /// Fails if any recorded input changed since the manifest was written.
    pub fn verify_inputs(&self) -> Result<()> {
        for (role, d) in &self.inputs {
            let now = sha256_file(&d.path)?;
            if now != d.sha256 {
                return Err(CliError::Input(format!(
                    "{role} input {} changed since the run (sha256 {now}, recorded {})",
                    d.path.display(),
                    d.sha256
                )));
            }
        }
        Ok(())
    }
}
