//! Embedding tables for atoms, bonds, attributes and relations.

use std::collections::BTreeMap;

use numcore::{ParameterSet, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{EncodeError, Result};
use crate::elementkg::ElementKG;
use crate::kgembed::KgEmbedding;
use crate::smiles::{Atom, AtomVocabulary, BondOrder};

pub const ATOM_DIM: usize = 128;
pub const BOND_DIM: usize = 64;
pub const ATTR_DIM: usize = 128;
pub const REL_DIM: usize = 64;

pub const ATOM_TABLE: &str = "tables.atom";
pub const BOND_TABLE: &str = "tables.bond";
pub const ATTR_TABLE: &str = "tables.attribute";
pub const REL_TABLE: &str = "tables.relation";

/// Range of uniform random table initialization.
pub const TABLE_INIT_SCALE: f64 = 0.5;

/// Seed of the fixed projection used when relation phases and the relation
/// table differ in width.
const RELATION_PROJECTION_SEED: u64 = 0x5eed;

pub enum KnowledgeInit<'a> {
    /// Frozen copies of the rotation-model output.
    Pretrained(&'a KgEmbedding),
    /// Trainable random vectors.
    Random,
}

/// Vocabularies mapping atoms, attributes and relations to table rows. The
/// tensors themselves live in a [`ParameterSet`] under the `tables.*` names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTables {
    pub atoms: AtomVocabulary,
    pub attributes: BTreeMap<String, usize>,
    pub relations: BTreeMap<String, usize>,
    pub random_init: bool,
}

impl FeatureTables {
    /// Builds the vocabularies and inserts the four tables into `params`.
    pub fn create(
        atoms: AtomVocabulary,
        kg: &ElementKG,
        init: KnowledgeInit<'_>,
        params: &mut ParameterSet,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let attributes: BTreeMap<String, usize> = kg
            .attributes()
            .enumerate()
            .map(|(i, a)| (a.to_string(), i))
            .collect();
        let relations: BTreeMap<String, usize> = kg
            .relation_types()
            .enumerate()
            .map(|(i, r)| (r.to_string(), i))
            .collect();

        params.insert(ATOM_TABLE, Tensor::uniform(atoms.len().max(1), ATOM_DIM, TABLE_INIT_SCALE, rng))?;
        params.insert(BOND_TABLE, Tensor::uniform(BondOrder::ALL.len(), BOND_DIM, TABLE_INIT_SCALE, rng))?;
        let (n_attr, n_rel) = (attributes.len().max(1), relations.len().max(1));
        match init {
            KnowledgeInit::Random => {
                params.insert(ATTR_TABLE, Tensor::uniform(n_attr, ATTR_DIM, TABLE_INIT_SCALE, rng))?;
                params.insert(REL_TABLE, Tensor::uniform(n_rel, REL_DIM, TABLE_INIT_SCALE, rng))?;
            }
            KnowledgeInit::Pretrained(emb) => {
                if emb.entity_dim() != ATTR_DIM {
                    return Err(EncodeError::DimensionMismatch {
                        expected: ATTR_DIM,
                        got: emb.entity_dim(),
                    });
                }
                let mut attr = Tensor::zeros(n_attr, ATTR_DIM);
                for (name, &i) in &attributes {
                    let v = emb
                        .entity_feature(name)
                        .map_err(|_| EncodeError::UncoveredNodeType(format!("attribute `{name}`")))?;
                    attr.row_slice_mut(i).copy_from_slice(&v);
                }
                let mut rel = Tensor::zeros(n_rel, REL_DIM);
                for (name, &i) in &relations {
                    let v = emb
                        .relation_feature(name, REL_DIM, RELATION_PROJECTION_SEED)
                        .map_err(|_| EncodeError::UncoveredNodeType(format!("relation `{name}`")))?;
                    rel.row_slice_mut(i).copy_from_slice(&v);
                }
                params.insert_frozen(ATTR_TABLE, attr)?;
                params.insert_frozen(REL_TABLE, rel)?;
            }
        }
        Ok(Self {
            atoms,
            attributes,
            relations,
            random_init: matches!(init, KnowledgeInit::Random),
        })
    }

    pub fn atom_row(&self, atom: &Atom) -> Result<usize> {
        self.atoms
            .get(atom)
            .ok_or_else(|| EncodeError::UncoveredNodeType(format!("atom type `{}`", atom.key())))
    }

    pub fn attribute_row(&self, name: &str) -> Result<usize> {
        self.attributes
            .get(name)
            .copied()
            .ok_or_else(|| EncodeError::UncoveredNodeType(format!("attribute `{name}`")))
    }

    pub fn relation_row(&self, name: &str) -> Result<usize> {
        self.relations
            .get(name)
            .copied()
            .ok_or_else(|| EncodeError::UncoveredNodeType(format!("relation `{name}`")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("tables serialize")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}
