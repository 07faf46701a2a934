//! Knowledge-augmented molecular graphs: each atom gains incoming edges from
//! the attribute entities its element is linked to in the knowledge graph.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::elementkg::{ElementKG, EntityKind};
use crate::smiles::{BondOrder, MolecularGraph};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AugmentError {
    #[error("molecule has no atoms")]
    EmptyGraph,
    #[error("atom {atom} has element {element}, which is not in the knowledge graph")]
    UnknownElement { atom: usize, element: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum UnknownElementPolicy {
    /// Leave the atom without attribute neighbors and count it.
    #[default]
    Skip,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum AugNode {
    /// Index into the source molecule's atoms.
    Atom(usize),
    /// Attribute entity name.
    Attribute(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Bidirectional,
    AttributeToAtom,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum EdgeLabel {
    Bond(BondOrder),
    Relation(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugEdge {
    pub label: EdgeLabel,
    pub direction: Direction,
    pub source: usize,
    pub target: usize,
}

/// Node order: the molecule's atoms in their original order, then one node
/// per distinct attribute entity, sorted by name. Edge order: bonds in the
/// molecule's order, then relation edges by target atom, relation and head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedGraph {
    pub nodes: Vec<AugNode>,
    pub edges: Vec<AugEdge>,
    pub origin: MolecularGraph,
    /// Atoms whose element was missing from the graph under the skip policy.
    pub skipped_atoms: usize,
}

impl AugmentedGraph {
    pub fn atom_count(&self) -> usize {
        self.origin.atom_count()
    }

    pub fn attribute_count(&self) -> usize {
        self.nodes.len() - self.atom_count()
    }

    pub fn bond_edges(&self) -> impl Iterator<Item = &AugEdge> {
        self.edges
            .iter()
            .filter(|e| matches!(e.label, EdgeLabel::Bond(_)))
    }

    pub fn relation_edges(&self) -> impl Iterator<Item = &AugEdge> {
        self.edges
            .iter()
            .filter(|e| matches!(e.label, EdgeLabel::Relation(_)))
    }

    /// Attribute entity names, in node order.
    pub fn attribute_names(&self) -> impl Iterator<Item = &str> {
        self.nodes.iter().filter_map(|n| match n {
            AugNode::Attribute(a) => Some(a.as_str()),
            AugNode::Atom(_) => None,
        })
    }

    pub fn node_label(&self, node: usize) -> String {
        match &self.nodes[node] {
            AugNode::Atom(i) => format!("atom:{i}"),
            AugNode::Attribute(a) => format!("attribute:{a}"),
        }
    }

    /// The molecule left after deleting attribute nodes and relation edges.
    pub fn strip_attributes(&self) -> MolecularGraph {
        let bonds = self
            .bond_edges()
            .map(|e| {
                let EdgeLabel::Bond(order) = e.label else { unreachable!() };
                crate::smiles::Bond {
                    begin: e.source,
                    end: e.target,
                    order,
                }
            })
            .collect();
        let atoms = self.nodes[..self.atom_count()]
            .iter()
            .map(|n| match n {
                AugNode::Atom(i) => self.origin.atoms[*i],
                AugNode::Attribute(_) => unreachable!("atoms come first"),
            })
            .collect();
        MolecularGraph::from_parts(atoms, bonds, self.origin.source_text.clone())
    }

    /// One edge per line: `src_kind:src_id  label  direction  dst_kind:dst_id`.
    pub fn debug_edges(&self) -> String {
        let mut out = String::new();
        for e in &self.edges {
            let (label, dir) = match (&e.label, e.direction) {
                (EdgeLabel::Bond(o), _) => (o.name().to_string(), "<->"),
                (EdgeLabel::Relation(r), _) => (r.clone(), "->"),
            };
            let _ = writeln!(
                out,
                "{}  {}  {}  {}",
                self.node_label(e.source),
                label,
                dir,
                self.node_label(e.target)
            );
        }
        out
    }
}

pub fn augment(
    mol: &MolecularGraph,
    kg: &ElementKG,
    policy: UnknownElementPolicy,
) -> Result<AugmentedGraph, AugmentError> {
    if mol.atoms.is_empty() {
        return Err(AugmentError::EmptyGraph);
    }
    let n = mol.atom_count();
    let mut skipped = 0;
    // (target atom, relation, head)
    let mut relation_edges = Vec::new();
    for (i, atom) in mol.atoms.iter().enumerate() {
        let sym = atom.element.symbol();
        if kg.entity_kind(sym) != Some(EntityKind::Element) {
            match policy {
                UnknownElementPolicy::Skip => {
                    skipped += 1;
                    continue;
                }
                UnknownElementPolicy::Error => {
                    return Err(AugmentError::UnknownElement {
                        atom: i,
                        element: sym.to_string(),
                    })
                }
            }
        }
        let triples = kg
            .neighbors_of_element(sym)
            .expect("element entity checked above");
        for t in triples {
            relation_edges.push((i, t.relation.as_str(), t.head.as_str()));
        }
    }

    let mut attr_index: BTreeMap<&str, usize> =
        relation_edges.iter().map(|&(_, _, h)| (h, 0)).collect();
    for (k, slot) in attr_index.values_mut().enumerate() {
        *slot = n + k;
    }

    let mut nodes: Vec<AugNode> = (0..n).map(AugNode::Atom).collect();
    nodes.extend(attr_index.keys().map(|a| AugNode::Attribute(a.to_string())));

    let mut edges: Vec<AugEdge> = mol
        .bonds
        .iter()
        .map(|b| AugEdge {
            label: EdgeLabel::Bond(b.order),
            direction: Direction::Bidirectional,
            source: b.begin,
            target: b.end,
        })
        .collect();
    edges.extend(relation_edges.iter().map(|&(atom, rel, head)| AugEdge {
        label: EdgeLabel::Relation(rel.to_string()),
        direction: Direction::AttributeToAtom,
        source: attr_index[head],
        target: atom,
    }));

    Ok(AugmentedGraph {
        nodes,
        edges,
        origin: mol.clone(),
        skipped_atoms: skipped,
    })
}
