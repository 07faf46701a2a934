//! Random and scaffold train/valid/test splits at 8:1:1.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{LabeledCorpus, Split};
use super::{PipelineError, Result};
use crate::contrast::hash_seq;
use crate::smiles::MolecularGraph;

pub const MIN_SPLIT_CORPUS: usize = 10;
const FRAC_TRAIN: f64 = 0.8;
const FRAC_VALID: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    Random,
    Scaffold,
}

impl std::str::FromStr for SplitMode {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Self::Random),
            "scaffold" => Ok(Self::Scaffold),
            other => Err(PipelineError::ConfigInvalid(format!("unknown split mode `{other}`"))),
        }
    }
}

pub fn split(corpus: LabeledCorpus, mode: SplitMode, seed: u64) -> Result<LabeledCorpus> {
    let assignment = match mode {
        SplitMode::Random => random_assignment(corpus.len(), seed)?,
        SplitMode::Scaffold => scaffold_assignment(&corpus.molecules)?,
    };
    Ok(corpus.with_assignment(assignment))
}

/// Seeded shuffle, then `floor(0.8 n)` train, `floor(0.1 n)` valid, the rest test.
pub fn random_assignment(n: usize, seed: u64) -> Result<Vec<Split>> {
    if n < MIN_SPLIT_CORPUS {
        return Err(PipelineError::CorpusTooSmall { needed: MIN_SPLIT_CORPUS, got: n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = n * 8 / 10;
    let n_valid = n / 10;
    let mut out = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_valid {
            Split::Valid
        } else {
            Split::Test
        };
    }
    Ok(out)
}

/// Ring systems plus linkers with every atom and bond made generic, so
/// benzene and cyclohexane share a key. Side chains are peeled by removing
/// degree-one atoms until none remain; acyclic molecules get the empty key.
/// The key hashes the remaining skeleton with iterated neighborhood
/// refinement, which is invariant to atom order.
pub fn scaffold_key(mol: &MolecularGraph) -> String {
    let n = mol.atom_count();
    let mut alive = vec![true; n];
    let mut degree: Vec<usize> = (0..n).map(|i| mol.degree(i)).collect();
    let mut stack: Vec<usize> = (0..n).filter(|&i| degree[i] <= 1).collect();
    while let Some(v) = stack.pop() {
        if !alive[v] {
            continue;
        }
        alive[v] = false;
        for &u in &mol.adjacency[v] {
            if alive[u] {
                degree[u] -= 1;
                if degree[u] == 1 {
                    stack.push(u);
                }
            }
        }
    }
    let keep: Vec<usize> = (0..n).filter(|&i| alive[i]).collect();
    if keep.is_empty() {
        return String::new();
    }
    let nbrs: Vec<Vec<usize>> = keep
        .iter()
        .map(|&v| mol.adjacency[v].iter().copied().filter(|&u| alive[u]).collect())
        .collect();
    let pos: BTreeMap<usize, usize> = keep.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let mut labels: Vec<u64> = vec![0; keep.len()];
    for _ in 0..keep.len() {
        labels = (0..keep.len())
            .map(|i| {
                let mut around: Vec<u64> = nbrs[i].iter().map(|u| labels[pos[u]]).collect();
                around.sort_unstable();
                hash_seq(std::iter::once(labels[i]).chain(around))
            })
            .collect();
    }
    labels.sort_unstable();
    let edges: usize = nbrs.iter().map(Vec::len).sum::<usize>() / 2;
    format!("{}a{}b{:016x}", keep.len(), edges, hash_seq(labels))
}

/// Groups by scaffold key, then places whole groups largest first: into
/// train while it stays within 80%, else valid while train plus valid stay
/// within 90%, else test. Ties in group size go by key.
pub fn scaffold_assignment(molecules: &[MolecularGraph]) -> Result<Vec<Split>> {
    let n = molecules.len();
    if n < MIN_SPLIT_CORPUS {
        return Err(PipelineError::CorpusTooSmall { needed: MIN_SPLIT_CORPUS, got: n });
    }
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, m) in molecules.iter().enumerate() {
        groups.entry(scaffold_key(m)).or_default().push(i);
    }
    let mut ordered: Vec<(String, Vec<usize>)> = groups.into_iter().collect();
    ordered.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then_with(|| a.0.cmp(&b.0)));
    let train_cut = FRAC_TRAIN * n as f64;
    let valid_cut = (FRAC_TRAIN + FRAC_VALID) * n as f64;
    let (mut n_train, mut n_valid) = (0usize, 0usize);
    let mut out = vec![Split::Test; n];
    for (_, members) in ordered {
        let size = members.len();
        let dest = if (n_train + size) as f64 > train_cut {
            if (n_train + n_valid + size) as f64 > valid_cut {
                Split::Test
            } else {
                n_valid += size;
                Split::Valid
            }
        } else {
            n_train += size;
            Split::Train
        };
        for i in members {
            out[i] = dest;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smiles::parse_smiles;

    fn key(s: &str) -> String {
        scaffold_key(&parse_smiles(s).unwrap())
    }

    #[test]
    fn random_split_of_100() {
        let a = random_assignment(100, 5).unwrap();
        let count = |s| a.iter().filter(|&&x| x == s).count();
        assert_eq!((count(Split::Train), count(Split::Valid), count(Split::Test)), (80, 10, 10));
        assert_eq!(a, random_assignment(100, 5).unwrap());
        assert!(matches!(random_assignment(9, 0), Err(PipelineError::CorpusTooSmall { .. })));
    }

    #[test]
    fn scaffold_keys() {
        assert_eq!(key("CCO"), "");
        assert_eq!(key("c1ccccc1"), key("C1CCCCC1"));
        assert_eq!(key("Clc1ccccc1"), key("c1ccccc1CCCO"));
        assert_eq!(key("c1ccncc1C"), key("Cc1ccccc1"));
        assert_ne!(key("c1ccccc1"), key("C1CCCC1"));
        assert_ne!(key("c1ccccc1"), key("c1ccc2ccccc2c1"));
        // linker length matters
        assert_ne!(key("c1ccccc1Cc1ccccc1"), key("c1ccccc1CCc1ccccc1"));
        assert_eq!(key("c1ccccc1Cc1ccccc1"), key("C1CCCCC1Cc1ccncc1"));
    }

    #[test]
    fn scaffold_key_ignores_atom_order() {
        let m = parse_smiles("CC(=O)Nc1ccc(O)cc1CC1CCNCC1").unwrap();
        let n = m.atom_count();
        let perm: Vec<usize> = (0..n).map(|i| (i * 7 + 3) % n).collect();
        assert_eq!(scaffold_key(&m), scaffold_key(&m.permute_atoms(&perm)));
    }

    #[test]
    fn same_scaffold_same_split() {
        let smiles = [
            "c1ccccc1O", "c1ccccc1N", "c1ccccc1C", "C1CCCCC1", "CCO", "CCN", "CCC", "C1CCC1",
            "c1ccc2ccccc2c1", "C1CC1", "C1CC1C", "OC1CCCCC1",
        ];
        let mols: Vec<_> = smiles.iter().map(|s| parse_smiles(s).unwrap()).collect();
        let a = scaffold_assignment(&mols).unwrap();
        for i in 0..mols.len() {
            for j in 0..mols.len() {
                if scaffold_key(&mols[i]) == scaffold_key(&mols[j]) {
                    assert_eq!(a[i], a[j], "{} {}", smiles[i], smiles[j]);
                }
            }
        }
    }
}
