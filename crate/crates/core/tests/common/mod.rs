#![allow(dead_code)]

pub mod grad;

use chemcl::element::Element;
use chemcl::elementkg::{ElementKG, Triple};
use chemcl::encoders::EncoderConfig;
use chemcl::MolecularGraph;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Five attributes, five elements, two relations: every attribute points at
/// one element through `r1` and at the next through `r2`.
pub fn toy_kg() -> ElementKG {
    let els = ["H", "C", "N", "O", "F"];
    let mut t = vec![];
    for i in 0..5 {
        t.push(Triple::new(format!("A{i}"), "r1", els[i]));
        t.push(Triple::new(format!("A{i}"), "r2", els[(i + 1) % 5]));
    }
    ElementKG::from_triples(els.map(|s| Element::from_symbol(s).unwrap()), t, vec![]).unwrap()
}

pub fn small_encoder() -> EncoderConfig {
    EncoderConfig {
        kmpnn_hidden: 6,
        kmpnn_steps: 2,
        set2set_steps: 2,
        gcn_hidden: 6,
        gcn_layers: 2,
        leaky_slope: 0.2,
    }
}

pub fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    p
}

pub fn permuted(mol: &MolecularGraph, seed: u64) -> MolecularGraph {
    mol.permute_atoms(&permutation(mol.atom_count(), seed))
}
