//! Run manifests: one JSON file next to every output artifact.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use pfsgld::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ConfigFile;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub bytes: u64,
    /// SHA-256 of `"blob <len>\0" ++ contents`, as git computes object ids.
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self> {
        let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut h = Sha256::new();
        h.update(format!("blob {}\0", data.len()).as_bytes());
        h.update(&data);
        Ok(FileDigest {
            path: path.display().to_string(),
            bytes: data.len() as u64,
            sha256: hex::encode(h.finalize()),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub started_unix_s: f64,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    /// Fully resolved config; `--config <this manifest>` replays the run.
    pub config: ConfigFile,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub timing: Timing,
}

/// Path of the manifest describing `artifact`.
pub fn manifest_path(artifact: &Path) -> PathBuf {
    let mut s = artifact.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

/// Collects what a command read so its manifests can be written at the end.
pub struct Recorder {
    command: &'static str,
    started_wall: SystemTime,
    started: Instant,
    inputs: Vec<FileDigest>,
}

impl Recorder {
    pub fn start(command: &'static str) -> Self {
        Recorder {
            command,
            started_wall: SystemTime::now(),
            started: Instant::now(),
            inputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(FileDigest::of(path)?);
        Ok(())
    }

    /// Writes `<artifact>.manifest.json` for each artifact.
    pub fn finish(&self, config: &ConfigFile, artifacts: &[PathBuf]) -> Result<()> {
        for a in artifacts {
            self.write_one(config, a, std::slice::from_ref(a))?;
        }
        Ok(())
    }

    /// One manifest at `at` covering several outputs.
    pub fn write_one(&self, config: &ConfigFile, at: &Path, outputs: &[PathBuf]) -> Result<()> {
        let m = RunManifest {
            command: self.command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.seed,
            config: config.clone(),
            inputs: self.inputs.clone(),
            outputs: outputs.iter().map(|p| FileDigest::of(p)).collect::<Result<_>>()?,
            timing: Timing {
                started_unix_s: self
                    .started_wall
                    .duration_since(UNIX_EPOCH)
                    .map(|d| d.as_secs_f64())
                    .unwrap_or(0.0),
                elapsed_s: self.started.elapsed().as_secs_f64(),
            },
        };
        let path = manifest_path(at);
        let text = serde_json::to_string_pretty(&m)?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
