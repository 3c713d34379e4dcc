//! Run manifests: configuration, providers, timings and file digests.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use causemotion::model::ScoringConfig;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::settings::Settings;

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

impl FileDigest {
    fn of(path: &Path, data: &[u8]) -> Self {
        FileDigest {
            path: path.display().to_string(),
            sha256: hex::encode(Sha256::digest(data)),
            bytes: data.len(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ProviderInfo {
    pub role: &'static str,
    pub id: String,
    pub version: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct StageTime {
    pub stage: String,
    pub millis: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConfigSnapshot {
    pub scoring: ScoringConfig,
    pub consistency_floor: f64,
    pub embed_dim: usize,
    pub embed_seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub command: String,
    pub config: Option<ConfigSnapshot>,
    pub inputs: Vec<FileDigest>,
    pub providers: Vec<ProviderInfo>,
    pub timings: Vec<StageTime>,
    pub outputs: Vec<FileDigest>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        RunManifest {
            tool: format!("causemotion {}", env!("CARGO_PKG_VERSION")),
            command: command.to_string(),
            config: None,
            inputs: Vec::new(),
            providers: Vec::new(),
            timings: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn with_settings(mut self, s: &Settings) -> Self {
        self.config = Some(ConfigSnapshot {
            scoring: s.scoring.clone(),
            consistency_floor: s.eval.consistency_floor,
            embed_dim: s.embed_dim,
            embed_seed: s.embed_seed,
        });
        self
    }

    pub fn provider(&mut self, role: &'static str, id: &str, version: &str) {
        self.providers.push(ProviderInfo {
            role,
            id: id.to_string(),
            version: version.to_string(),
        });
    }

    pub fn time(&mut self, stage: &str, millis: f64) {
        self.timings.push(StageTime {
            stage: stage.to_string(),
            millis,
        });
    }

    /// Reads an input file and records its digest.
    pub fn read(&mut self, path: &Path) -> Result<Vec<u8>> {
        let data = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        self.inputs.push(FileDigest::of(path, &data));
        Ok(data)
    }

    /// Writes an output file and records its digest.
    pub fn write(&mut self, path: &Path, data: &[u8]) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        std::fs::write(path, data).with_context(|| format!("writing {}", path.display()))?;
        self.outputs.push(FileDigest::of(path, data));
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
    }

    /// Saves next to `output` as `<output>.manifest.json`.
    pub fn save_beside(&self, output: &Path) -> Result<PathBuf> {
        let mut name = output.as_os_str().to_owned();
        name.push(".manifest.json");
        let path = PathBuf::from(name);
        self.save(&path)?;
        Ok(path)
    }
}
