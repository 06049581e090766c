//! Unified experiment configuration. Every CLI command derives its behaviour
//! from one of these, and its hash is stamped into every artifact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::CorpusConfig;
use crate::error::{Error, Result};
use crate::sampler::SamplerConfig;
use crate::scorenet::ScoreNetShape;
use crate::sde::SdeParams;
use crate::signal::StftConfig;
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub corpus: CorpusConfig,
    pub stft: StftConfig,
    pub sde: SdeParams,
    pub shape: ScoreNetShape,
    pub train: TrainConfig,
    pub sampler: SamplerConfig,
    /// Seed of the network initialisation.
    pub init_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            corpus: CorpusConfig::default(),
            stft: StftConfig::default(),
            sde: SdeParams::default(),
            shape: ScoreNetShape::toy(),
            train: TrainConfig::toy(),
            sampler: SamplerConfig::default(),
            init_seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.stft.validate()?;
        self.sde.validate()?;
        self.shape.validate()?;
        self.train.adam.validate()?;
        self.sampler.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Json(j) => Error::format(path, j.to_string()),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Hex SHA-256 of the compact JSON form. Field order is fixed by the
    /// struct definitions, so equal configs hash equally.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&bytes);
        let mut out = String::with_capacity(64);
        for b in digest {
            let _ = write!(out, "{b:02x}");
        }
        out
    }
}
