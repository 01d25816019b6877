//! Whole-pipeline configuration and its content hash.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::downstream::DownstreamConfig;
use crate::error::{Error, Result};
use crate::graph::GraphBuildConfig;
use crate::labeler::LabelConfig;
use crate::synth::WorldConfig;
use crate::trainer::TrainConfig;

pub const DEFAULT_POOL_FACTOR: usize = 3;

/// Instance threshold of the synthetic preset: two clean occurrences of a
/// transition (about 140 each) clear it, one does not.
pub const SYNTHETIC_INSTANCE_THRESHOLD: f64 = 200.0;
pub const SYNTHETIC_PRETRAIN_LR: f64 = 1e-3;
pub const SYNTHETIC_PRETRAIN_EPOCHS: usize = 100;
pub const SYNTHETIC_DOWNSTREAM_EPOCHS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Consecutive stored segments averaged into one matching segment.
    pub pool_factor: usize,
    pub graph: GraphBuildConfig,
    pub labels: LabelConfig,
    pub train: TrainConfig,
    pub downstream: DownstreamConfig,
    pub world: WorldConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            pool_factor: DEFAULT_POOL_FACTOR,
            graph: GraphBuildConfig::default(),
            labels: LabelConfig::default(),
            train: TrainConfig::default(),
            downstream: DownstreamConfig::default(),
            world: WorldConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Settings for synthetic worlds: stored segments are already at
    /// matching granularity, the instance threshold is scaled to a
    /// 200-video corpus and both training stages run on a shorter budget.
    pub fn synthetic() -> Self {
        let mut c = Self {
            pool_factor: 1,
            ..Self::default()
        };
        c.graph.instance_threshold = SYNTHETIC_INSTANCE_THRESHOLD;
        c.train.learning_rate = SYNTHETIC_PRETRAIN_LR;
        c.train.max_epochs = SYNTHETIC_PRETRAIN_EPOCHS;
        c.train.patience = 5;
        c.downstream.max_epochs = SYNTHETIC_DOWNSTREAM_EPOCHS;
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.pool_factor == 0 {
            return Err(Error::Config("pool_factor must be >= 1".into()));
        }
        let g = &self.graph;
        if !(g.dedup_threshold > 0.0)
            || !g.match_threshold.is_finite()
            || !(g.instance_threshold >= 0.0)
        {
            return Err(Error::Config("invalid graph thresholds".into()));
        }
        self.labels.validate()?;
        self.train.validate()?;
        self.downstream.validate()?;
        self.world.validate()
    }

    /// The world settings with the pipeline seed applied.
    pub fn world_config(&self) -> WorldConfig {
        WorldConfig {
            seed: self.seed,
            ..self.world.clone()
        }
    }

    /// SHA-256 of the canonical JSON form, as lowercase hex.
    pub fn hash(&self) -> String {
        let mut normalized = self.clone();
        normalized.world.seed = self.seed;
        let json = serde_json::to_vec(&normalized).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}
