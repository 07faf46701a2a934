//! Labeled corpora, the bundled molecule list, and synthetic generators.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{PipelineError, Result};
use crate::smiles::{parse_smiles, read_corpus, MolecularGraph};

pub const BUNDLED_MOLECULES: &str = include_str!("../../data/molecules.smi");

/// Parses the bundled molecule list.
pub fn bundled_molecules() -> Vec<MolecularGraph> {
    parse_smiles_list(BUNDLED_MOLECULES).expect("bundled molecules parse")
}

/// One SMILES per line; blank lines and `#` comments skipped; tab-separated
/// numeric fields after the SMILES are ignored.
pub fn parse_smiles_list(text: &str) -> Result<Vec<MolecularGraph>> {
    let lines = read_corpus(text).map_err(|e| PipelineError::Corpus(e.to_string()))?;
    lines
        .iter()
        .map(|l| {
            parse_smiles(&l.smiles).map_err(|e| PipelineError::Corpus(format!("line {}: {e}", l.line_number)))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Classification,
    Regression,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCorpus {
    pub name: String,
    pub kind: TaskKind,
    pub molecules: Vec<MolecularGraph>,
    /// `labels[i][t]`: task `t` of molecule `i`; `None` when missing.
    pub labels: Vec<Vec<Option<f64>>>,
    /// Empty until split.
    pub assignment: Vec<Split>,
}

impl LabeledCorpus {
    pub fn new(
        name: impl Into<String>,
        kind: TaskKind,
        molecules: Vec<MolecularGraph>,
        labels: Vec<Vec<Option<f64>>>,
    ) -> Result<Self> {
        if molecules.len() != labels.len() {
            return Err(PipelineError::Corpus(format!(
                "{} molecules but {} label rows",
                molecules.len(),
                labels.len()
            )));
        }
        let tasks = labels.first().map_or(0, Vec::len);
        if tasks == 0 || labels.iter().any(|l| l.len() != tasks) {
            return Err(PipelineError::Corpus("every molecule needs the same nonzero number of labels".into()));
        }
        Ok(Self {
            name: name.into(),
            kind,
            molecules,
            labels,
            assignment: Vec::new(),
        })
    }

    /// Parses `SMILES<TAB>label<TAB>...` lines; an empty field marks a
    /// missing label.
    pub fn from_text(name: impl Into<String>, kind: TaskKind, text: &str) -> Result<Self> {
        let lines = read_corpus(text).map_err(|e| PipelineError::Corpus(e.to_string()))?;
        let mut mols = Vec::with_capacity(lines.len());
        let mut labels = Vec::with_capacity(lines.len());
        for l in lines {
            mols.push(
                parse_smiles(&l.smiles).map_err(|e| PipelineError::Corpus(format!("line {}: {e}", l.line_number)))?,
            );
            labels.push(l.labels);
        }
        Self::new(name, kind, mols, labels)
    }

    pub fn len(&self) -> usize {
        self.molecules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.molecules.is_empty()
    }

    pub fn tasks(&self) -> usize {
        self.labels.first().map_or(0, Vec::len)
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.assignment.get(i) == Some(&split)).collect()
    }

    pub fn with_assignment(mut self, assignment: Vec<Split>) -> Self {
        assert_eq!(assignment.len(), self.len());
        self.assignment = assignment;
        self
    }
}

/// Binary task: 1 when the molecule contains F, Cl, Br, I or At.
pub fn halogen_corpus(name: &str, molecules: Vec<MolecularGraph>) -> Result<LabeledCorpus> {
    let labels = molecules
        .iter()
        .map(|m| vec![Some(if m.has_halogen() { 1.0 } else { 0.0 })])
        .collect();
    LabeledCorpus::new(name, TaskKind::Classification, molecules, labels)
}

/// Regression task: number of heavy atoms other than carbon.
pub fn heteroatom_corpus(name: &str, molecules: Vec<MolecularGraph>) -> Result<LabeledCorpus> {
    let labels = molecules
        .iter()
        .map(|m| vec![Some(m.atoms.iter().filter(|a| a.element.symbol() != "C").count() as f64)])
        .collect();
    LabeledCorpus::new(name, TaskKind::Regression, molecules, labels)
}

const RINGS: [&str; 6] = ["c1ccccc1", "C1CCCCC1", "c1ccncc1", "C1CCOC1", "c1ccsc1", "C1CCNCC1"];
/// Ring variants with one substitution site marked `X`.
const SUBSTITUTED_RINGS: [&str; 4] = ["c1ccc(X)cc1", "c1cc(X)ccn1", "C1CC(X)CCC1", "c1cc(X)cs1"];
const HALOGENS: [&str; 4] = ["F", "Cl", "Br", "I"];
const SUBSTITUENTS: [&str; 4] = ["O", "N", "C", "C(=O)O"];

/// Seeded random molecules, half of them halogenated. Each is a short
/// heteroatom-bearing chain with an optional ring; halogenated molecules
/// carry one to three halogen substituents on the chain or ring. Returns
/// SMILES strings, which always parse.
pub fn synthetic_smiles(count: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let halogenated = i % 2 == 0;
        let len = rng.gen_range(2..=6);
        let mut chain: Vec<String> = (0..len)
            .map(|_| match rng.gen_range(0..10) {
                0 => "N".to_string(),
                1 => "O".to_string(),
                2 => "C(=O)".to_string(),
                _ => "C".to_string(),
            })
            .collect();
        let halogen_sites = if halogenated { rng.gen_range(1..=3) } else { 0 };
        let ring = match rng.gen_range(0..3) {
            0 => None,
            1 => Some(RINGS.choose(&mut rng).expect("nonempty").to_string()),
            _ => {
                let sub = if halogenated && rng.gen_bool(0.5) {
                    HALOGENS.choose(&mut rng).expect("nonempty")
                } else {
                    SUBSTITUENTS.choose(&mut rng).expect("nonempty")
                };
                Some(SUBSTITUTED_RINGS.choose(&mut rng).expect("nonempty").replace('X', sub))
            }
        };
        for _ in 0..halogen_sites {
            let x = HALOGENS.choose(&mut rng).expect("nonempty");
            let site = rng.gen_range(0..chain.len());
            if chain[site] == "C" {
                chain[site] = format!("C({x})");
            } else {
                chain.insert(0, x.to_string());
            }
        }
        let mut smiles = chain.concat();
        if let Some(r) = ring {
            smiles.push_str(&r);
        }
        out.push(smiles);
    }
    out
}

pub fn synthetic_molecules(count: usize, seed: u64) -> Vec<MolecularGraph> {
    synthetic_smiles(count, seed)
        .iter()
        .map(|s| parse_smiles(s).expect("generator emits valid SMILES"))
        .collect()
}
