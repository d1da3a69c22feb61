use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::CliResult;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub config_hash: String,
    /// Checkpoints and datasets, relative to the run directory.
    pub outputs: Vec<String>,
    pub metrics: Vec<String>,
    pub wall_clock_secs: f64,
}

impl StageRecord {
    pub fn files(&self) -> impl Iterator<Item = &String> {
        self.outputs.iter().chain(&self.metrics)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub code_version: String,
    pub stages: BTreeMap<String, StageRecord>,
}

impl RunManifest {
    /// The manifest in `dir`, or an empty one if there is none yet.
    pub fn load_or_default(dir: &Path) -> CliResult<Self> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Self::default());
        }
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn save(&self, dir: &Path) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(dir.join(MANIFEST_FILE), text)?;
        Ok(())
    }

    /// Whether `stage` ran under `hash` and all its files are still present.
    pub fn is_complete(&self, stage: &str, hash: &str, dir: &Path) -> bool {
        self.stages
            .get(stage)
            .is_some_and(|r| r.config_hash == hash && r.files().all(|f| dir.join(f).exists()))
    }
}
