use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::token_space::VocabSpec;

/// Shape and seed of the toy decoder. Serialized as a TOML key/value file
/// with the vocabulary under a `[vocab]` table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub d_model: usize,
    pub attn_heads: usize,
    pub max_seq: usize,
    pub speaker_dim: usize,
    pub adapter_in_dim: usize,
    pub seed: u64,
    /// Standard deviation of the initial weights.
    #[serde(default = "default_init_std")]
    pub init_std: f64,
    pub vocab: VocabSpec,
}

fn default_init_std() -> f64 {
    0.02
}

impl ModelConfig {
    pub fn tiny(vocab: VocabSpec) -> Self {
        ModelConfig {
            layers: 2,
            d_model: 32,
            attn_heads: 4,
            max_seq: 64,
            speaker_dim: 8,
            adapter_in_dim: 6,
            seed: 0,
            init_std: default_init_std(),
            vocab,
        }
    }

    pub fn j(&self) -> usize {
        self.vocab.j()
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.attn_heads
    }

    pub fn mlp_dim(&self) -> usize {
        4 * self.d_model
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.vocab.validate()?;
        if self.attn_heads == 0 || self.d_model == 0 || !self.d_model.is_multiple_of(self.attn_heads) {
            return Err(ModelError::Config(format!(
                "d_model {} not divisible by attn_heads {}",
                self.d_model, self.attn_heads
            )));
        }
        if self.max_seq == 0 {
            return Err(ModelError::Config("max_seq must be at least 1".into()));
        }
        if self.speaker_dim == 0 || self.adapter_in_dim == 0 {
            return Err(ModelError::Config("speaker_dim and adapter_in_dim must be at least 1".into()));
        }
        if !(self.init_std.is_finite() && self.init_std > 0.0) {
            return Err(ModelError::Config("init_std must be positive".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, ModelError> {
        let cfg: ModelConfig = toml::from_str(text).map_err(|e| ModelError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path).map_err(|e| ModelError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }
}

/// Parameter groups used by staged training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    /// Continuous-feature adapter.
    Adapter,
    /// Speaker-vector projection.
    Speaker,
    /// Positions, transformer blocks, final norm.
    Backbone,
    /// Token embeddings.
    Embedding,
    /// Output heads.
    Heads,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Trainable {
    AdapterOnly,
    AdapterBackbone,
    #[default]
    All,
}

impl Trainable {
    pub fn includes(self, group: ParamGroup) -> bool {
        match self {
            Trainable::AdapterOnly => group == ParamGroup::Adapter,
            Trainable::AdapterBackbone => matches!(
                group,
                ParamGroup::Adapter | ParamGroup::Speaker | ParamGroup::Backbone
            ),
            Trainable::All => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub trainable: Trainable,
    pub lr: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub optimizer: Optimizer,
}

impl StageConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.batch_size == 0 {
            return Err(ModelError::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(ModelError::Config("lr must be finite and non-negative".into()));
        }
        Ok(())
    }
}
