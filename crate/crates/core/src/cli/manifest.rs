//! Run manifests: everything needed to repeat a command and check its outputs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::run::RunConfig;
use crate::data::file_hash;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileRecord {
    pub fn of(path: &Path) -> Result<Self> {
        Ok(Self { path: path.to_path_buf(), sha256: file_hash(path)? })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Fully resolved configuration; replaying it needs nothing else.
    pub config: RunConfig,
    pub seed: u64,
    pub version: String,
    pub inputs: Vec<FileRecord>,
    /// Output files relative to the run directory.
    pub outputs: Vec<FileRecord>,
    pub wall_clock_secs: f64,
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// Fails when a recorded input no longer has its recorded hash.
    pub fn check_inputs(&self) -> Result<()> {
        for input in &self.inputs {
            let now = file_hash(&input.path)?;
            if now != input.sha256 {
                return Err(Error::Config(format!(
                    "input {} changed since the run was recorded",
                    input.path.display()
                )));
            }
        }
        Ok(())
    }
}

/// Crate version, with the git description when the build environment provides one.
pub fn version_string() -> String {
    match option_env!("FADEOUT_GIT_DESCRIBE") {
        Some(d) => format!("{} ({d})", env!("CARGO_PKG_VERSION")),
        None => env!("CARGO_PKG_VERSION").to_string(),
    }
}
