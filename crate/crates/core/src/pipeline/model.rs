//! Encoder parameters plus feature vocabularies, and their checkpoint form.

use std::collections::BTreeMap;

use numcore::{Checkpoint, ParameterSet, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{PipelineError, Result};
use crate::augment::{augment, AugmentedGraph, UnknownElementPolicy};
use crate::element::Element;
use crate::elementkg::ElementKG;
use crate::encoders::{
    gcn_encode, init_gcn, init_kmpnn, kmpnn_encode, EncoderConfig, FeatureTables, GcnBatch, KmpnnBatch,
    KnowledgeInit,
};
use crate::kgembed::KgEmbedding;
use crate::smiles::{Atom, AtomVocabulary, MolecularGraph};

pub const META_TABLES: &str = "tables";
pub const META_ENCODER: &str = "encoder";

/// Which encoder produces the downstream graph embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    /// Graph convolution over the original molecular graph.
    Gcn,
    /// Knowledge-aware message passing over the augmented graph.
    Kmpnn,
}

impl EncoderKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Gcn => "gcn",
            Self::Kmpnn => "kmpnn",
        }
    }
}

impl std::str::FromStr for EncoderKind {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gcn" => Ok(Self::Gcn),
            "kmpnn" => Ok(Self::Kmpnn),
            other => Err(PipelineError::ConfigInvalid(format!("unknown encoder `{other}`"))),
        }
    }
}

/// Aromatic forms admitted to the vocabulary even when the corpus lacks them.
const AROMATIC_SYMBOLS: [&str; 8] = ["B", "C", "N", "O", "P", "S", "Se", "As"];

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub params: ParameterSet,
    pub tables: FeatureTables,
    pub encoder: EncoderConfig,
}

impl Model {
    /// Corpus atom types in first-seen order, then those of the bundled
    /// molecules, every neutral element, the common aromatic forms, and
    /// singly charged N and O, so downstream corpora rarely meet an
    /// uncovered type.
    pub fn vocabulary(molecules: &[MolecularGraph]) -> Result<AtomVocabulary> {
        let bundled = super::data::bundled_molecules();
        let mut vocab =
            AtomVocabulary::from_molecules(molecules.iter().chain(&bundled), AtomVocabulary::DEFAULT_CAPACITY)?;
        let atom = |s: &str, aromatic, formal_charge| Atom {
            element: Element::from_symbol(s).expect("known symbol"),
            aromatic,
            formal_charge,
        };
        for e in Element::all() {
            vocab.insert(&atom(e.symbol(), false, 0))?;
        }
        for s in AROMATIC_SYMBOLS {
            vocab.insert(&atom(s, true, 0))?;
        }
        for (s, c) in [("N", 1), ("O", -1), ("N", -1), ("O", 1)] {
            vocab.insert(&atom(s, false, c))?;
        }
        Ok(vocab)
    }

    /// Fresh tables and encoders. With `kg_emb`, attribute and relation
    /// tables are frozen copies of it; otherwise they are random and
    /// trainable.
    pub fn init(
        molecules: &[MolecularGraph],
        kg: &ElementKG,
        kg_emb: Option<&KgEmbedding>,
        encoder: &EncoderConfig,
        seed: u64,
    ) -> Result<Self> {
        let vocab = Self::vocabulary(molecules)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParameterSet::new();
        let init = match kg_emb {
            Some(e) => KnowledgeInit::Pretrained(e),
            None => KnowledgeInit::Random,
        };
        let tables = FeatureTables::create(vocab, kg, init, &mut params, &mut rng)?;
        init_kmpnn(&mut params, encoder, &mut rng)?;
        init_gcn(&mut params, encoder, &mut rng)?;
        Ok(Self {
            params,
            tables,
            encoder: encoder.clone(),
        })
    }

    pub fn embedding_dim(&self) -> usize {
        self.encoder.embedding_dim()
    }

    pub fn to_checkpoint(&self, extra: &BTreeMap<String, String>) -> Checkpoint {
        let mut ck = Checkpoint::new(self.params.clone());
        ck.meta = extra.clone();
        ck.meta.insert(META_TABLES.into(), self.tables.to_json());
        ck.meta.insert(
            META_ENCODER.into(),
            serde_json::to_string(&self.encoder).expect("encoder config serializes"),
        );
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let field = |k: &str| {
            ck.meta
                .get(k)
                .ok_or_else(|| PipelineError::Checkpoint(format!("missing `{k}` metadata")))
        };
        let tables = FeatureTables::from_json(field(META_TABLES)?)
            .map_err(|e| PipelineError::Checkpoint(format!("tables: {e}")))?;
        let encoder = serde_json::from_str(field(META_ENCODER)?)
            .map_err(|e| PipelineError::Checkpoint(format!("encoder: {e}")))?;
        let mut params = ck.params.clone();
        params.reset_optimizer();
        Ok(Self { params, tables, encoder })
    }

    /// Graph embeddings without recording gradients for later use.
    pub fn embed(&self, kind: EncoderKind, molecules: &[MolecularGraph], kg: &ElementKG) -> Result<Tensor> {
        let augmented = match kind {
            EncoderKind::Kmpnn => augment_all(molecules, kg)?,
            EncoderKind::Gcn => Vec::new(),
        };
        let inputs = EncoderInputs {
            molecules,
            augmented: &augmented,
        };
        let mut rows = Vec::new();
        let mut cols = self.embedding_dim();
        for chunk in (0..molecules.len()).collect::<Vec<_>>().chunks(64) {
            let tape = Tape::new();
            let h = inputs.encode(&tape, &self.params, &self.tables, &self.encoder, kind, chunk)?.value();
            cols = h.cols();
            rows.extend(h.into_data());
        }
        Ok(Tensor::from_vec(molecules.len(), cols, rows)?)
    }
}

pub fn augment_all(molecules: &[MolecularGraph], kg: &ElementKG) -> Result<Vec<AugmentedGraph>> {
    use rayon::prelude::*;
    molecules
        .par_iter()
        .map(|m| augment(m, kg, UnknownElementPolicy::Skip).map_err(PipelineError::from))
        .collect()
}

/// Molecules plus their augmented views (empty when only the graph
/// convolution encoder is used).
#[derive(Clone, Copy)]
pub struct EncoderInputs<'a> {
    pub molecules: &'a [MolecularGraph],
    pub augmented: &'a [AugmentedGraph],
}

impl EncoderInputs<'_> {
    /// Embeds the molecules at `members` as one batch, `[members, 2h]`.
    pub fn encode<'t>(
        &self,
        tape: &'t Tape,
        params: &ParameterSet,
        tables: &FeatureTables,
        cfg: &EncoderConfig,
        kind: EncoderKind,
        members: &[usize],
    ) -> Result<Var<'t>> {
        Ok(match kind {
            EncoderKind::Gcn => {
                let graphs: Vec<&MolecularGraph> = members.iter().map(|&i| &self.molecules[i]).collect();
                let batch = GcnBatch::new(&graphs, tables)?;
                gcn_encode(tape, params, &batch, cfg)?.embedding
            }
            EncoderKind::Kmpnn => {
                let graphs: Vec<&AugmentedGraph> = members.iter().map(|&i| &self.augmented[i]).collect();
                let batch = KmpnnBatch::new(&graphs, tables)?;
                kmpnn_encode(tape, params, &batch, cfg)?.embedding
            }
        })
    }
}
