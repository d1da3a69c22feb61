//! Experiment configuration. One TOML file fixes every hyperparameter; the
//! per-module `seed` fields are overwritten by seeds derived from
//! `master_seed` and the stage name.

use std::path::{Path, PathBuf};

use gnndm::classify::ClassifierConfig;
use gnndm::ddmn::DdmnConfig;
use gnndm::genlatent::VaeConfig;
use gnndm::nns::NnsParams;
use gnndm::seed::derive_seed;
use gnndm::synthgen::GeneratorConfig;
use gnndm::theorylab::BoundsConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub target_domain: usize,
    /// Share of the pooled source held out for the source-risk estimate.
    pub holdout_frac: f64,
    pub out_dir: PathBuf,
    pub data: GeneratorConfig,
    pub ddmn: DdmnConfig,
    pub vae: VaeConfig,
    pub classifier: ClassifierConfig,
    pub nns: NnsParams,
    pub bounds: BoundsConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            master_seed: 0,
            target_domain: 3,
            holdout_frac: 0.2,
            out_dir: PathBuf::from("runs/default"),
            data: GeneratorConfig::default(),
            ddmn: DdmnConfig::default(),
            vae: VaeConfig::default(),
            classifier: ClassifierConfig::default(),
            nns: NnsParams::default(),
            bounds: BoundsConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is plain data")
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.target_domain >= self.data.n_domains {
            return Err(CliError::Config(format!(
                "target_domain {} out of range for {} domains",
                self.target_domain, self.data.n_domains
            )));
        }
        if !(self.holdout_frac > 0.0 && self.holdout_frac < 1.0) {
            return Err(CliError::Config(format!(
                "holdout_frac {} outside (0, 1)",
                self.holdout_frac
            )));
        }
        Ok(())
    }

    /// Copy with every module seed replaced by `hash(master_seed, stage)`.
    pub fn resolved(&self) -> Self {
        let m = self.master_seed;
        let mut c = self.clone();
        c.data.seed = derive_seed(m, "gen");
        c.ddmn.seed = derive_seed(m, "train-ddmn");
        c.vae.seed = derive_seed(m, "train-vae");
        c.classifier.seed = derive_seed(m, "train-clf");
        c.nns.seed = derive_seed(m, "nns");
        c.bounds.seed = derive_seed(m, "verify-bounds");
        c.bounds.proxy.seed = derive_seed(m, "proxy");
        c
    }

    pub fn holdout_seed(&self) -> u64 {
        derive_seed(self.master_seed, "holdout")
    }

    /// SHA-256 of the canonical JSON form, excluding the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        let json = serde_json::to_vec(&c).expect("config is plain data");
        hex::encode(Sha256::digest(&json))
    }
}
