//! Run manifests and output-file plumbing shared by the subcommands.

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{Context, Result};
use clipxpert::data_io::write_atomic;
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct InputFile {
    pub role: &'static str,
    pub path: String,
    pub sha256: String,
}

impl InputFile {
    pub fn hash(role: &'static str, path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(Self {
            role,
            path: path.display().to_string(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        })
    }
}

/// What produced a report: tool version, resolved configuration and input
/// digests. Wall-clock timings are kept out so reruns are byte-identical.
#[derive(Debug, Serialize)]
pub struct RunManifest<C: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config: C,
    pub inputs: Vec<InputFile>,
}

impl<C: Serialize> RunManifest<C> {
    pub fn new(command: &'static str, config: C, inputs: Vec<InputFile>) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            config,
            inputs,
        }
    }
}

#[derive(Debug, Default, Serialize)]
pub struct Timings {
    pub command: &'static str,
    /// Seconds per stage, in execution order.
    pub stages: Vec<(String, f64)>,
}

impl Timings {
    pub fn new(command: &'static str) -> Self {
        Self {
            command,
            stages: Vec::new(),
        }
    }

    pub fn push(&mut self, stage: impl Into<String>, elapsed: Duration) {
        self.stages.push((stage.into(), elapsed.as_secs_f64()));
    }
}

pub struct OutDir(PathBuf);

impl OutDir {
    pub fn create(path: &Path) -> Result<Self> {
        std::fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))?;
        Ok(Self(path.to_path_buf()))
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }

    pub fn write_json(&self, name: &str, value: &impl Serialize) -> Result<PathBuf> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write_bytes(name, &bytes)
    }

    pub fn write_bytes(&self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.path(name);
        write_atomic(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
