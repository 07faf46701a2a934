pub mod element;
pub mod encoders;
pub mod pipeline;
pub mod augment;
pub mod contrast;
pub mod elementkg;
pub mod kgembed;
pub mod smiles;

pub use element::Element;
pub use elementkg::{build_kg, ElementKG, ElementTable, KgStats};
pub use smiles::{parse_smiles, Atom, AtomVocabulary, Bond, BondOrder, MolecularGraph, SmilesError};
