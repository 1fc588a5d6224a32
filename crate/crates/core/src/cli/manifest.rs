use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ConfigFile;
use crate::error::Result;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: Vec<String>,
    pub seed: u64,
    pub config: ConfigFile,
    pub started: String,
    pub finished: String,
    pub outputs: Vec<OutputFile>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub struct ManifestBuilder {
    command: Vec<String>,
    config: ConfigFile,
    started: String,
    outputs: Vec<PathBuf>,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

impl ManifestBuilder {
    pub fn new(command: Vec<String>, config: ConfigFile) -> Self {
        ManifestBuilder { command, config, started: now(), outputs: Vec::new() }
    }

    pub fn config_mut(&mut self) -> &mut ConfigFile {
        &mut self.config
    }

    pub fn add(&mut self, path: PathBuf) {
        self.outputs.push(path);
    }

    pub fn write(self, out_dir: &Path) -> Result<PathBuf> {
        let mut outputs = Vec::with_capacity(self.outputs.len());
        for p in &self.outputs {
            outputs.push(OutputFile {
                path: p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
                sha256: sha256_file(p)?,
            });
        }
        let m = RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: self.command,
            seed: self.config.seed,
            config: self.config,
            started: self.started,
            finished: now(),
            outputs,
        };
        let path = out_dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(&m)?)?;
        Ok(path)
    }
}
