use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use phenograph_core::digest::sha256_hex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Provenance record written next to every command's outputs. Hashes are
/// keyed by file name so runs in different directories compare equal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: Value,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub wall_clock_seconds: f64,
}

pub struct ManifestBuilder {
    command: String,
    seed: u64,
    config: Value,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    started: Instant,
}

fn file_key(p: &Path) -> String {
    p.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| p.display().to_string())
}

pub fn hash_file(p: &Path) -> Result<String> {
    let bytes = fs::read(p).with_context(|| format!("hashing {}", p.display()))?;
    Ok(sha256_hex(&bytes))
}

impl ManifestBuilder {
    pub fn new(command: &str, seed: u64) -> Self {
        Self {
            command: command.to_string(),
            seed,
            config: Value::Null,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: Instant::now(),
        }
    }

    pub fn config(&mut self, config: Value) -> &mut Self {
        self.config = config;
        self
    }

    pub fn input(&mut self, p: &Path) -> &mut Self {
        self.inputs.push(p.to_path_buf());
        self
    }

    pub fn output(&mut self, p: &Path) -> &mut Self {
        self.outputs.push(p.to_path_buf());
        self
    }

    pub fn finish(&self, path: &Path) -> Result<RunManifest> {
        let hash_all = |files: &[PathBuf]| -> Result<BTreeMap<String, String>> {
            files.iter().map(|p| Ok((file_key(p), hash_file(p)?))).collect()
        };
        let m = RunManifest {
            command: self.command.clone(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: self.seed,
            config: self.config.clone(),
            inputs: hash_all(&self.inputs)?,
            outputs: hash_all(&self.outputs)?,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
        };
        let body = serde_json::to_string_pretty(&m)?;
        fs::write(path, body + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(m)
    }
}

/// `<output>.manifest.json`
pub fn manifest_path_for(output: &Path) -> PathBuf {
    let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    output.with_file_name(name)
}
