use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use epidg::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Running,
    Completed,
    Failed,
}

/// Everything needed to repeat a run: the resolved configuration, the seed,
/// the code version and checksums of any input files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub started_unix: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_unix: Option<u64>,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// SHA-256 of each input feature file, keyed by path.
    #[serde(default)]
    pub data_checksums: BTreeMap<String, String>,
    pub config: ExperimentConfig,
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = std::fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

pub fn data_checksums(cfg: &ExperimentConfig) -> Result<BTreeMap<String, String>> {
    cfg.data
        .paths
        .iter()
        .map(|p| Ok((p.display().to_string(), sha256_file(p)?)))
        .collect()
}

impl RunManifest {
    pub fn new(config: ExperimentConfig, output_dir: &Path) -> Result<Self> {
        let seed = config.train_config()?.seed;
        Ok(RunManifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            output_dir: output_dir.to_path_buf(),
            started_unix: unix_now(),
            finished_unix: None,
            status: RunStatus::Running,
            error: None,
            data_checksums: data_checksums(&config)?,
            config,
        })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Config(format!("manifest: {e}")))?;
        std::fs::write(dir.join(MANIFEST_FILE), text)?;
        Ok(())
    }

    /// Reads a manifest given either its path or its run directory.
    pub fn read(path: &Path) -> Result<Self> {
        let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let text = std::fs::read_to_string(&file)
            .map_err(|e| Error::Config(format!("cannot read manifest {}: {e}", file.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", file.display())))
    }

    /// Fails when an input file has changed since the manifest was written.
    pub fn verify_inputs(&self) -> Result<()> {
        let now = data_checksums(&self.config)?;
        for (path, sum) in &self.data_checksums {
            match now.get(path) {
                Some(s) if s == sum => {}
                _ => {
                    return Err(Error::Io(std::io::Error::new(
                        std::io::ErrorKind::InvalidData,
                        format!("input file {path} no longer matches the checksum recorded in the manifest"),
                    )))
                }
            }
        }
        Ok(())
    }
}
