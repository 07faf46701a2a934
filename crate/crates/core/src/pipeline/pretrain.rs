//! Contrastive pretraining: each original graph (graph convolution) is
//! paired with its knowledge-augmented view (KMPNN); both go through a shared
//! projection head into NT-Xent over hard-negative batches.

use std::collections::BTreeMap;

use numcore::{AdamConfig, ParameterSet, Tape, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::PretrainConfig;
use super::model::{augment_all, EncoderInputs, EncoderKind, Model};
use super::{PipelineError, Result};
use crate::contrast::{
    build_hard_batches, build_random_batches, mean_intra_batch_tanimoto, morgan_fingerprint, nt_xent,
    ContrastBatch, Fingerprint, ProjectionHead,
};
use crate::elementkg::ElementKG;
use crate::encoders::{EncoderConfig, FeatureTables};
use crate::kgembed::KgEmbedding;
use crate::smiles::MolecularGraph;

pub const HEAD_PREFIX: &str = "head";

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    /// Encoders and tables; the projection head is dropped.
    pub model: Model,
    pub epoch_losses: Vec<f64>,
    /// Mean within-batch Tanimoto of each epoch's batches.
    pub batch_similarity: Vec<f64>,
}

impl PretrainOutcome {
    pub fn metadata(cfg: &PretrainConfig) -> BTreeMap<String, String> {
        BTreeMap::from([
            ("stage".to_string(), "pretrain".to_string()),
            ("pretrain_config".to_string(), toml::to_string(cfg).expect("config serializes")),
        ])
    }
}

pub fn projection_head(cfg: &PretrainConfig, encoder: &EncoderConfig) -> ProjectionHead {
    ProjectionHead::new(encoder.embedding_dim(), cfg.projection_hidden, cfg.projection_dim)
}

pub fn fingerprints(corpus: &[MolecularGraph], radius: usize, nbits: usize) -> Result<Vec<Fingerprint>> {
    corpus
        .par_iter()
        .map(|m| morgan_fingerprint(m, radius, nbits).map_err(PipelineError::from))
        .collect()
}

/// Batches for one epoch: hard-negative partition or a seeded shuffle.
pub fn epoch_batches(fps: &[Fingerprint], cfg: &PretrainConfig, epoch: usize) -> Result<Vec<ContrastBatch>> {
    let n = cfg.batch_size.min(fps.len());
    let seed = cfg.seed.wrapping_mul(0x9e37_79b9).wrapping_add(epoch as u64);
    Ok(if cfg.negative_mining {
        build_hard_batches(fps, n, seed)?
    } else {
        build_random_batches(fps.len(), n, seed)?
    })
}

/// NT-Xent between projected graph-convolution embeddings of the originals
/// and projected KMPNN embeddings of their augmented views.
#[allow(clippy::too_many_arguments)]
pub fn contrastive_loss<'t>(
    tape: &'t Tape,
    params: &ParameterSet,
    tables: &FeatureTables,
    encoder: &EncoderConfig,
    head: &ProjectionHead,
    tau: f64,
    inputs: EncoderInputs<'_>,
    members: &[usize],
) -> Result<Var<'t>> {
    let h = inputs.encode(tape, params, tables, encoder, EncoderKind::Gcn, members)?;
    let h_aug = inputs.encode(tape, params, tables, encoder, EncoderKind::Kmpnn, members)?;
    let z = head.project(tape, params, h)?;
    let z_aug = head.project(tape, params, h_aug)?;
    Ok(nt_xent(z, z_aug, tau)?)
}

/// Trains encoders and head with Adam. Batches with a single member have no
/// negatives and are skipped. With `knowledge_init`, `kg_emb` supplies the
/// frozen attribute and relation tables.
pub fn pretrain(
    corpus: &[MolecularGraph],
    kg: &ElementKG,
    kg_emb: Option<&KgEmbedding>,
    cfg: &PretrainConfig,
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    if corpus.len() < 2 {
        return Err(PipelineError::CorpusTooSmall { needed: 2, got: corpus.len() });
    }
    let emb = match (cfg.knowledge_init, kg_emb) {
        (true, None) => {
            return Err(PipelineError::ConfigInvalid("knowledge_init needs a knowledge graph embedding".into()))
        }
        (true, Some(e)) => Some(e),
        (false, _) => None,
    };
    let encoder = cfg.encoder();
    let mut model = Model::init(corpus, kg, emb, &encoder, cfg.seed)?;
    let head = projection_head(cfg, &encoder);
    head.init(&mut model.params, &mut ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x4845_4144))?;

    let augmented = augment_all(corpus, kg)?;
    let inputs = EncoderInputs { molecules: corpus, augmented: &augmented };
    let fps = fingerprints(corpus, cfg.fingerprint_radius, cfg.fingerprint_bits)?;
    let adam = AdamConfig::with_lr(cfg.lr);

    let mut epoch_losses = Vec::with_capacity(cfg.epoch);
    let mut batch_similarity = Vec::with_capacity(cfg.epoch);
    for epoch in 0..cfg.epoch {
        let batches = epoch_batches(&fps, cfg, epoch)?;
        batch_similarity.push(mean_intra_batch_tanimoto(&fps, &batches)?);
        let mut total = 0.0;
        let mut count = 0usize;
        for b in batches.iter().filter(|b| b.members.len() >= 2) {
            let tape = Tape::new();
            let loss = contrastive_loss(
                &tape,
                &model.params,
                &model.tables,
                &encoder,
                &head,
                cfg.tau,
                inputs,
                &b.members,
            )?;
            total += loss.item();
            count += 1;
            tape.backward_into(loss, &mut model.params)?;
            model.params.fill_missing_grads();
            model.params.adam_step(&adam)?;
        }
        let mean = total / count.max(1) as f64;
        log::info!("pretrain epoch {}: loss {mean:.6}", epoch + 1);
        epoch_losses.push(mean);
    }
    model.params.remove_prefix(&format!("{HEAD_PREFIX}."));
    model.params.reset_optimizer();
    Ok(PretrainOutcome { model, epoch_losses, batch_similarity })
}
