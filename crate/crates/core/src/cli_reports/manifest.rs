//! `manifest.json`: config hash, input digests, per-stage counters and
//! artifact digests. Every stage rewrites its own entry.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::CliError;
use crate::sentiment_scorer::{hex, PROMPT_VERSION};

pub const MANIFEST_FILE: &str = "manifest.json";

pub type Counters = BTreeMap<String, u64>;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub config_hash: String,
    pub counters: Counters,
    /// Output-relative path to SHA-256.
    pub artifacts: BTreeMap<String, String>,
    pub completed_at: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub crate_version: String,
    pub prompt_version: String,
    /// Input path (as configured) to SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub stages: BTreeMap<String, StageRecord>,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let mut file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf).map_err(|e| CliError::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex(&hasher.finalize()))
}

impl Manifest {
    pub fn load_or_default(out_dir: &Path) -> Result<Self, CliError> {
        let path = out_dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Manifest::default());
        }
        let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Corrupt {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn save(&self, out_dir: &Path) -> Result<(), CliError> {
        let path = out_dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))
    }

    /// Digest every artifact and record the stage.
    pub fn record_stage(
        &mut self,
        out_dir: &Path,
        stage: &str,
        config_hash: &str,
        counters: Counters,
        artifacts: &[String],
    ) -> Result<(), CliError> {
        let mut digests = BTreeMap::new();
        for rel in artifacts {
            digests.insert(rel.clone(), sha256_file(&out_dir.join(rel))?);
        }
        self.config_hash = config_hash.to_string();
        self.crate_version = env!("CARGO_PKG_VERSION").to_string();
        self.prompt_version = PROMPT_VERSION.to_string();
        self.stages.insert(
            stage.to_string(),
            StageRecord {
                config_hash: config_hash.to_string(),
                counters,
                artifacts: digests,
                completed_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            },
        );
        Ok(())
    }

    /// Artifacts whose current digest differs from the recorded one.
    pub fn verify(&self, out_dir: &Path) -> Result<Vec<String>, CliError> {
        let mut changed = Vec::new();
        for record in self.stages.values() {
            for (rel, digest) in &record.artifacts {
                let path = out_dir.join(rel);
                if !path.exists() || sha256_file(&path)? != *digest {
                    changed.push(rel.clone());
                }
            }
        }
        Ok(changed)
    }
}
