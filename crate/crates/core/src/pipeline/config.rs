//! Training configuration, read from TOML. Key names follow the published
//! hyperparameter tables (`epoch`, `GCN_layers`, `KMPNN_step`, ...).

use serde::{Deserialize, Serialize};

use super::{PipelineError, Result};
use crate::contrast::{DEFAULT_NBITS, DEFAULT_RADIUS};
use crate::encoders::tables::{BOND_DIM, REL_DIM};
use crate::encoders::EncoderConfig;
use crate::kgembed::RotateConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub epoch: usize,
    pub tau: f64,
    pub batch_size: usize,
    pub lr: f64,
    #[serde(rename = "GCN_layers")]
    pub gcn_layers: usize,
    #[serde(rename = "GCN_node_hidden")]
    pub gcn_node_hidden: usize,
    #[serde(rename = "KMPNN_step")]
    pub kmpnn_step: usize,
    #[serde(rename = "KMPNN_node_hidden")]
    pub kmpnn_node_hidden: usize,
    #[serde(rename = "KMPNN_edge_hidden")]
    pub kmpnn_edge_hidden: usize,
    pub node_out: usize,
    pub edge_out: usize,
    pub set2set_step: usize,
    pub leaky_slope: f64,
    pub projection_hidden: usize,
    pub projection_dim: usize,
    pub fingerprint_radius: usize,
    pub fingerprint_bits: usize,
    pub negative_mining: bool,
    pub knowledge_init: bool,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epoch: 10,
            tau: 0.1,
            batch_size: 32,
            lr: 1e-3,
            gcn_layers: 2,
            gcn_node_hidden: 64,
            kmpnn_step: 6,
            kmpnn_node_hidden: 64,
            kmpnn_edge_hidden: 64,
            node_out: 64,
            edge_out: 64,
            set2set_step: 3,
            leaky_slope: 0.2,
            projection_hidden: 128,
            projection_dim: 64,
            fingerprint_radius: DEFAULT_RADIUS,
            fingerprint_bits: DEFAULT_NBITS,
            negative_mining: true,
            knowledge_init: true,
            seed: 0,
        }
    }
}

impl PretrainConfig {
    /// Published full-scale values for epochs, batch size and learning rate.
    pub fn paper_scale() -> Self {
        Self {
            epoch: 20,
            batch_size: 256,
            lr: 1e-4,
            tau: 0.1,
            ..Self::default()
        }
    }

    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            kmpnn_hidden: self.kmpnn_node_hidden,
            kmpnn_steps: self.kmpnn_step,
            set2set_steps: self.set2set_step,
            gcn_hidden: self.gcn_node_hidden,
            gcn_layers: self.gcn_layers,
            leaky_slope: self.leaky_slope,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PipelineError::ConfigInvalid(m));
        if !(self.tau > 0.0) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2".into());
        }
        if self.gcn_layers == 0 || self.set2set_step == 0 {
            return bad("GCN_layers and set2set_step must be positive".into());
        }
        if self.kmpnn_node_hidden == 0 || self.projection_hidden == 0 || self.projection_dim == 0 {
            return bad("hidden sizes must be positive".into());
        }
        if self.gcn_node_hidden != self.kmpnn_node_hidden {
            return bad(format!(
                "GCN_node_hidden ({}) must equal KMPNN_node_hidden ({}) so both views share the projection head",
                self.gcn_node_hidden, self.kmpnn_node_hidden
            ));
        }
        if self.node_out != self.kmpnn_node_hidden {
            return bad(format!("node_out ({}) must equal KMPNN_node_hidden ({})", self.node_out, self.kmpnn_node_hidden));
        }
        if self.kmpnn_edge_hidden != BOND_DIM || self.edge_out != REL_DIM {
            return bad(format!("KMPNN_edge_hidden and edge_out are fixed at {BOND_DIM}"));
        }
        if self.fingerprint_bits == 0 {
            return bad("fingerprint_bits must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DownstreamConfig {
    pub batch_size: usize,
    pub lr: f64,
    /// Hidden width of the fine-tune predictor.
    pub hidden_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for DownstreamConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            lr: 1e-3,
            hidden_size: 64,
            patience: 20,
            max_epochs: 100,
            seed: 0,
        }
    }
}

impl DownstreamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.lr > 0.0) || self.hidden_size == 0 || self.max_epochs == 0 {
            return Err(PipelineError::ConfigInvalid(
                "downstream batch_size, lr, hidden_size and max_epochs must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KgEmbedConfig {
    pub epoch: usize,
    pub lr: f64,
    pub margin: f64,
    pub negatives: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for KgEmbedConfig {
    fn default() -> Self {
        let r = RotateConfig::default();
        Self {
            epoch: r.epochs,
            lr: r.lr,
            margin: r.margin,
            negatives: r.negatives_per_positive,
            batch_size: r.batch_size,
            seed: r.seed,
        }
    }
}

impl KgEmbedConfig {
    /// Entity width is fixed by the attribute feature table.
    pub fn rotate(&self) -> RotateConfig {
        RotateConfig {
            dim: crate::encoders::tables::ATTR_DIM,
            epochs: self.epoch,
            lr: self.lr,
            margin: self.margin,
            negatives_per_positive: self.negatives,
            batch_size: self.batch_size,
            seed: self.seed,
            ..RotateConfig::default()
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub pretrain: PretrainConfig,
    pub downstream: DownstreamConfig,
    pub kg_embedding: KgEmbedConfig,
}

impl PipelineConfig {
    pub fn paper_scale() -> Self {
        Self {
            pretrain: PretrainConfig::paper_scale(),
            ..Self::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| PipelineError::ConfigInvalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies one seed to every stage.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.pretrain.seed = seed;
        self.downstream.seed = seed;
        self.kg_embedding.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.pretrain.validate()?;
        self.downstream.validate()
    }
}
