//! Extraction of last-round KMPNN attention per atom.

use numcore::Tape;
use serde::{Deserialize, Serialize};

use super::model::Model;
use super::Result;
use crate::augment::{augment, AugNode, UnknownElementPolicy};
use crate::elementkg::ElementKG;
use crate::encoders::{kmpnn_encode, KmpnnBatch};
use crate::smiles::MolecularGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighborKind {
    Attribute,
    Atom,
}

/// One CSV row: the weight atom `atom_index` gives one in-neighbor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionRow {
    pub mol_index: usize,
    pub atom_index: usize,
    pub neighbor_kind: NeighborKind,
    /// Attribute name, or element symbol plus atom index (`O2`).
    pub neighbor_label: String,
    pub weight: f64,
}

/// Attention over attribute neighbors and over atom neighbors is softmaxed
/// separately inside the encoder; here both are rescaled together so the
/// weights each atom gives its in-neighbors sum to one. Atoms without
/// in-neighbors get no rows.
pub fn dump_attention(model: &Model, molecules: &[MolecularGraph], kg: &ElementKG) -> Result<Vec<AttentionRow>> {
    let mut rows = Vec::new();
    for (mol_index, mol) in molecules.iter().enumerate() {
        let aug = augment(mol, kg, UnknownElementPolicy::Skip)?;
        let batch = KmpnnBatch::new(&[&aug], &model.tables)?;
        let tape = Tape::new();
        let out = kmpnn_encode(&tape, &model.params, &batch, &model.encoder)?;
        let mut per_atom: Vec<Vec<(NeighborKind, String, f64)>> = vec![Vec::new(); mol.atom_count()];
        if let Some(alpha) = out.alpha {
            let a = alpha.value();
            let n_atoms = aug.atom_count();
            for (e, (&src, &dst)) in batch.rel_src.iter().zip(&batch.rel_dst).enumerate() {
                let label = match &aug.nodes[n_atoms + src] {
                    AugNode::Attribute(name) => name.clone(),
                    AugNode::Atom(_) => unreachable!("relation sources are attribute nodes"),
                };
                per_atom[dst].push((NeighborKind::Attribute, label, a.data()[e]));
            }
        }
        if let Some(beta) = out.beta {
            let b = beta.value();
            for (e, (&src, &dst)) in batch.bond_src.iter().zip(&batch.bond_dst).enumerate() {
                let label = format!("{}{src}", mol.atoms[src].element.symbol());
                per_atom[dst].push((NeighborKind::Atom, label, b.data()[e]));
            }
        }
        for (atom_index, entries) in per_atom.into_iter().enumerate() {
            let total: f64 = entries.iter().map(|e| e.2).sum();
            for (neighbor_kind, neighbor_label, w) in entries {
                rows.push(AttentionRow {
                    mol_index,
                    atom_index,
                    neighbor_kind,
                    neighbor_label,
                    weight: w / total,
                });
            }
        }
    }
    Ok(rows)
}

/// CSV with weights written to nine decimals.
pub fn attention_csv(rows: &[AttentionRow]) -> String {
    let mut out = String::from("mol_index,atom_index,neighbor_kind,neighbor_label,weight\n");
    for r in rows {
        let kind = match r.neighbor_kind {
            NeighborKind::Attribute => "attribute",
            NeighborKind::Atom => "atom",
        };
        out.push_str(&format!(
            "{},{},{kind},{},{:.9}\n",
            r.mol_index, r.atom_index, r.neighbor_label, r.weight
        ));
    }
    out
}
