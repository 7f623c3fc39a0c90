//! Run configuration: defaults, an optional TOML file, then flags.
//!
//! ```toml
//! d = 768
//! layers = 2
//! heads = 8
//! k = 3
//! seed = 7
//! candidate_docs = 2
//! offline = true
//! embed_endpoint = "http://localhost:8000"
//! llm_endpoint = "http://localhost:8001/complete"
//! timeout_secs = 30
//! retries = 2
//!
//! [train]
//! epochs = 5
//! batch_size = 8
//! learning_rate = 5e-6
//!
//! [augment]
//! support_ratio = 0.5
//! after_rule = "decrement"
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use tempver_core::augment::AugmentConfig;
use tempver_core::pipeline::CANDIDATE_DOCS;
use tempver_core::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub d: usize,
    pub layers: usize,
    pub heads: usize,
    pub k: usize,
    pub seed: u64,
    pub candidate_docs: usize,
    pub offline: bool,
    pub embed_endpoint: Option<String>,
    pub llm_endpoint: Option<String>,
    pub timeout_secs: u64,
    pub retries: u32,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            d: 768,
            layers: 2,
            heads: 8,
            k: 3,
            seed: 0,
            candidate_docs: CANDIDATE_DOCS,
            offline: false,
            embed_endpoint: None,
            llm_endpoint: None,
            timeout_secs: 30,
            retries: 2,
            train: TrainConfig::default(),
            augment: AugmentConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_file(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.k == 0 {
            return Err("k must be at least 1".into());
        }
        if self.heads == 0 || !self.d.is_multiple_of(self.heads) {
            return Err(format!("d = {} is not divisible by h = {}", self.d, self.heads));
        }
        if self.candidate_docs == 0 {
            return Err("candidate_docs must be at least 1".into());
        }
        Ok(())
    }
}
