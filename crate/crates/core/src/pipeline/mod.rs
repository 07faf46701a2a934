//! End-to-end workflow: contrastive pretraining, downstream fine-tune and
//! linear evaluation, dataset splits, metrics, attention extraction, and
//! the ablation matrix.

use thiserror::Error;

pub mod ablation;
pub mod attention;
pub mod config;
pub mod data;
pub mod downstream;
pub mod metrics;
pub mod model;
pub mod pretrain;
pub mod split;

pub use ablation::{ablation_run, AblationOptions, AblationTable, AblationVariant};
pub use attention::{attention_csv, dump_attention, AttentionRow, NeighborKind};
pub use config::{DownstreamConfig, KgEmbedConfig, PipelineConfig, PretrainConfig};
pub use data::{bundled_molecules, LabeledCorpus, Split, TaskKind};
pub use downstream::{finetune, FinetuneReport, Protocol};
pub use metrics::{rmse, roc_auc, MetricRow};
pub use model::{EncoderKind, Model};
pub use pretrain::{pretrain, PretrainOutcome};
pub use split::{scaffold_key, split, SplitMode};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("corpus too small: need at least {needed} molecules, got {got}")]
    CorpusTooSmall { needed: usize, got: usize },
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("unknown protocol `{0}` (expected fine_tune or linear)")]
    ProtocolUnknown(String),
    #[error("the {0} split is empty")]
    EmptySplit(String),
    #[error("ROC-AUC needs both classes")]
    SingleClass,
    #[error("metric: {0}")]
    Metric(String),
    #[error("corpus: {0}")]
    Corpus(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Vocabulary(#[from] crate::smiles::VocabularyOverflow),
    #[error(transparent)]
    Augment(#[from] crate::augment::AugmentError),
    #[error(transparent)]
    Encode(#[from] crate::encoders::EncodeError),
    #[error(transparent)]
    Contrast(#[from] crate::contrast::ContrastError),
    #[error(transparent)]
    Embed(#[from] crate::kgembed::EmbedError),
    #[error(transparent)]
    Kg(#[from] crate::elementkg::KgError),
    #[error(transparent)]
    Num(#[from] numcore::NumError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;
