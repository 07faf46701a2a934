//! Graph encoders: the knowledge-aware attentive message-passing network
//! over augmented graphs, a plain graph-convolution encoder over original
//! graphs, the set2set readout, and the feature tables both draw from.

use numcore::{NumError, ParameterSet, Tape, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod gcn;
pub mod kmpnn;
pub mod set2set;
pub mod tables;

pub use gcn::{gcn_encode, init_gcn, GcnBatch, GcnOutput};
pub use kmpnn::{attention_coeffs, init_kmpnn, kmpnn_encode, msg_atom, msg_attr, KmpnnBatch, KmpnnOutput};
pub use set2set::{init_set2set, set2set};
pub use tables::{FeatureTables, KnowledgeInit};

#[derive(Debug, Error)]
pub enum EncodeError {
    #[error("no feature row for {0}")]
    UncoveredNodeType(String),
    #[error("attention needs at least one neighbor")]
    EmptyNeighborhood,
    #[error("set2set needs at least one vector per set")]
    EmptySet,
    #[error("batch has no graphs")]
    EmptyBatch,
    #[error("knowledge embedding width {got} does not match the table width {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Num(#[from] NumError),
}

pub type Result<T, E = EncodeError> = std::result::Result<T, E>;

/// Hyperparameters shared by both encoders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub kmpnn_hidden: usize,
    pub kmpnn_steps: usize,
    pub set2set_steps: usize,
    pub gcn_hidden: usize,
    pub gcn_layers: usize,
    pub leaky_slope: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            kmpnn_hidden: 64,
            kmpnn_steps: 6,
            set2set_steps: 3,
            gcn_hidden: 64,
            gcn_layers: 2,
            leaky_slope: 0.2,
        }
    }
}

impl EncoderConfig {
    /// Width of both graph embeddings (they must agree for the shared head).
    pub fn embedding_dim(&self) -> usize {
        2 * self.kmpnn_hidden
    }
}

/// Glorot weight `{name}.w` and zero bias `{name}.b`.
pub fn init_linear(
    params: &mut ParameterSet,
    name: &str,
    fan_in: usize,
    fan_out: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    params.insert(format!("{name}.w"), Tensor::glorot(fan_in, fan_out, rng))?;
    params.insert(format!("{name}.b"), Tensor::zeros(1, fan_out))?;
    Ok(())
}

/// `x W + b` for the parameters created by [`init_linear`].
pub fn linear<'t>(tape: &'t Tape, params: &ParameterSet, name: &str, x: Var<'t>) -> Result<Var<'t>> {
    let w = tape.param(params, &format!("{name}.w"))?;
    let b = tape.param(params, &format!("{name}.b"))?;
    Ok(x.matmul(w)?.add_row(b)?)
}
