//! SMILES parsing into molecular graphs.
//!
//! Supported: organic-subset atoms (`B C N O P S F Cl Br I` and aromatic
//! `b c n o p s`), bracket atoms with hydrogen count and charge, ring
//! closures (`1`..`9`, `%nn`), branches and the bond symbols `- = # :`.
//! Stereochemistry, isotopes, atom classes, wildcards and multi-component
//! input (`.`) are rejected with [`SmilesError::UnknownSymbol`].

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::element::Element;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SmilesError {
    #[error("empty SMILES string")]
    EmptyInput,
    #[error("unbalanced parenthesis at byte {offset}")]
    UnbalancedParenthesis { offset: usize },
    #[error("ring {ring} opened at byte {offset} is never closed")]
    UnclosedRing { offset: usize, ring: u32 },
    #[error("unsupported or unknown symbol `{symbol}` at byte {offset}")]
    UnknownSymbol { offset: usize, symbol: String },
    #[error("unexpected `{token}` at byte {offset}")]
    UnexpectedToken { offset: usize, token: char },
}

impl SmilesError {
    pub fn offset(&self) -> usize {
        match self {
            SmilesError::EmptyInput => 0,
            SmilesError::UnbalancedParenthesis { offset }
            | SmilesError::UnclosedRing { offset, .. }
            | SmilesError::UnknownSymbol { offset, .. }
            | SmilesError::UnexpectedToken { offset, .. } => *offset,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    pub const ALL: [BondOrder; 4] = [
        BondOrder::Single,
        BondOrder::Double,
        BondOrder::Triple,
        BondOrder::Aromatic,
    ];

    /// Key into the bond embedding table.
    pub fn type_index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            BondOrder::Single => "single",
            BondOrder::Double => "double",
            BondOrder::Triple => "triple",
            BondOrder::Aromatic => "aromatic",
        }
    }

    fn from_symbol(b: u8) -> Option<Self> {
        match b {
            b'-' => Some(BondOrder::Single),
            b'=' => Some(BondOrder::Double),
            b'#' => Some(BondOrder::Triple),
            b':' => Some(BondOrder::Aromatic),
            _ => None,
        }
    }
}

impl fmt::Display for BondOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Identity of an atom type: what the atom embedding table is keyed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AtomKey {
    pub element: Element,
    pub aromatic: bool,
    pub charge: i8,
}

impl fmt::Display for AtomKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sym = if self.aromatic {
            self.element.symbol().to_lowercase()
        } else {
            self.element.symbol().to_string()
        };
        match self.charge {
            0 => write!(f, "{sym}"),
            c if c > 0 => write!(f, "{sym}+{c}"),
            c => write!(f, "{sym}{c}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Atom {
    pub element: Element,
    pub aromatic: bool,
    pub formal_charge: i8,
}

impl Atom {
    pub fn key(&self) -> AtomKey {
        AtomKey {
            element: self.element,
            aromatic: self.aromatic,
            charge: self.formal_charge,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Bond {
    pub begin: usize,
    pub end: usize,
    pub order: BondOrder,
}

impl Bond {
    pub fn type_index(&self) -> usize {
        self.order.type_index()
    }

    pub fn other(&self, atom: usize) -> usize {
        if atom == self.begin {
            self.end
        } else {
            self.begin
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MolecularGraph {
    pub atoms: Vec<Atom>,
    pub bonds: Vec<Bond>,
    /// Neighbor atom indices per atom, in bond insertion order.
    pub adjacency: Vec<Vec<usize>>,
    pub source_text: String,
}

impl MolecularGraph {
    pub fn from_parts(atoms: Vec<Atom>, bonds: Vec<Bond>, source_text: String) -> Self {
        let mut adjacency = vec![Vec::new(); atoms.len()];
        for b in &bonds {
            adjacency[b.begin].push(b.end);
            adjacency[b.end].push(b.begin);
        }
        Self {
            atoms,
            bonds,
            adjacency,
            source_text,
        }
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    pub fn bond_count(&self) -> usize {
        self.bonds.len()
    }

    pub fn degree(&self, atom: usize) -> usize {
        self.adjacency[atom].len()
    }

    pub fn degree_sequence(&self) -> Vec<usize> {
        self.adjacency.iter().map(Vec::len).collect()
    }

    pub fn bond_between(&self, a: usize, b: usize) -> Option<&Bond> {
        self.bonds
            .iter()
            .find(|bd| (bd.begin == a && bd.end == b) || (bd.begin == b && bd.end == a))
    }

    pub fn has_halogen(&self) -> bool {
        self.atoms.iter().any(|a| a.element.is_halogen())
    }

    /// Relabels atoms so that old atom `i` becomes atom `perm[i]`.
    /// Bonds keep their order; endpoints are remapped.
    ///
    /// # Panics
    /// If `perm` is not a permutation of `0..atom_count()`.
    pub fn permute_atoms(&self, perm: &[usize]) -> MolecularGraph {
        assert_eq!(perm.len(), self.atoms.len());
        let mut atoms = vec![None; self.atoms.len()];
        for (old, &new) in perm.iter().enumerate() {
            assert!(atoms[new].is_none(), "not a permutation");
            atoms[new] = Some(self.atoms[old]);
        }
        let atoms = atoms.into_iter().map(Option::unwrap).collect();
        let bonds = self
            .bonds
            .iter()
            .map(|b| Bond {
                begin: perm[b.begin],
                end: perm[b.end],
                order: b.order,
            })
            .collect();
        MolecularGraph::from_parts(atoms, bonds, self.source_text.clone())
    }

    /// Whether every atom is reachable from atom 0.
    pub fn is_connected(&self) -> bool {
        if self.atoms.is_empty() {
            return true;
        }
        let mut seen = vec![false; self.atoms.len()];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(a) = stack.pop() {
            for &n in &self.adjacency[a] {
                if !seen[n] {
                    seen[n] = true;
                    stack.push(n);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

struct Parser<'a> {
    input: &'a [u8],
    pos: usize,
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    branches: Vec<(usize, usize)>,
    rings: HashMap<u32, (usize, Option<BondOrder>, usize)>,
    prev: Option<usize>,
    pending: Option<(BondOrder, usize)>,
}

/// Parses a single-component SMILES string.
pub fn parse_smiles(text: &str) -> Result<MolecularGraph, SmilesError> {
    if text.is_empty() {
        return Err(SmilesError::EmptyInput);
    }
    let mut p = Parser {
        input: text.as_bytes(),
        pos: 0,
        atoms: Vec::new(),
        bonds: Vec::new(),
        branches: Vec::new(),
        rings: HashMap::new(),
        prev: None,
        pending: None,
    };
    p.run()?;
    Ok(MolecularGraph::from_parts(p.atoms, p.bonds, text.to_string()))
}

impl Parser<'_> {
    fn unknown(&self, offset: usize, len: usize) -> SmilesError {
        let end = (offset + len).min(self.input.len());
        SmilesError::UnknownSymbol {
            offset,
            symbol: String::from_utf8_lossy(&self.input[offset..end]).into_owned(),
        }
    }

    fn unexpected(&self, offset: usize) -> SmilesError {
        SmilesError::UnexpectedToken {
            offset,
            token: self.input[offset] as char,
        }
    }

    fn run(&mut self) -> Result<(), SmilesError> {
        while self.pos < self.input.len() {
            let start = self.pos;
            let c = self.input[start];
            match c {
                b'(' => {
                    let Some(prev) = self.prev else {
                        return Err(SmilesError::UnbalancedParenthesis { offset: start });
                    };
                    if self.pending.is_some() {
                        return Err(self.unexpected(start));
                    }
                    self.branches.push((prev, start));
                    self.pos += 1;
                }
                b')' => {
                    let Some((atom, _)) = self.branches.pop() else {
                        return Err(SmilesError::UnbalancedParenthesis { offset: start });
                    };
                    if self.pending.is_some() || self.input.get(start.wrapping_sub(1)) == Some(&b'(')
                    {
                        return Err(self.unexpected(start));
                    }
                    self.prev = Some(atom);
                    self.pos += 1;
                }
                b'-' | b'=' | b'#' | b':' => {
                    if self.prev.is_none() || self.pending.is_some() {
                        return Err(self.unexpected(start));
                    }
                    self.pending = BondOrder::from_symbol(c).map(|o| (o, start));
                    self.pos += 1;
                }
                b'0'..=b'9' => {
                    self.pos += 1;
                    self.ring_bond((c - b'0') as u32, start)?;
                }
                b'%' => {
                    let digits = self.input.get(start + 1..start + 3);
                    match digits {
                        Some(d) if d.iter().all(u8::is_ascii_digit) => {
                            let n = ((d[0] - b'0') * 10 + (d[1] - b'0')) as u32;
                            self.pos += 3;
                            self.ring_bond(n, start)?;
                        }
                        _ => return Err(self.unknown(start, 3)),
                    }
                }
                b'[' => {
                    let atom = self.bracket_atom()?;
                    self.add_atom(atom);
                }
                _ => {
                    let atom = self.organic_atom()?;
                    self.add_atom(atom);
                }
            }
        }
        if let Some((_, offset)) = self.pending {
            return Err(self.unexpected(offset));
        }
        if let Some(&(_, offset)) = self.branches.last() {
            return Err(SmilesError::UnbalancedParenthesis { offset });
        }
        if let Some((&ring, &(_, _, offset))) = self.rings.iter().min_by_key(|(_, v)| v.2) {
            return Err(SmilesError::UnclosedRing { offset, ring });
        }
        if self.atoms.is_empty() {
            return Err(SmilesError::EmptyInput);
        }
        Ok(())
    }

    fn implicit_order(&self, a: usize, b: usize) -> BondOrder {
        if self.atoms[a].aromatic && self.atoms[b].aromatic {
            BondOrder::Aromatic
        } else {
            BondOrder::Single
        }
    }

    fn add_atom(&mut self, atom: Atom) {
        let idx = self.atoms.len();
        self.atoms.push(atom);
        if let Some(prev) = self.prev {
            let order = match self.pending.take() {
                Some((o, _)) => o,
                None => self.implicit_order(prev, idx),
            };
            self.bonds.push(Bond {
                begin: prev,
                end: idx,
                order,
            });
        }
        self.prev = Some(idx);
    }

    fn ring_bond(&mut self, ring: u32, offset: usize) -> Result<(), SmilesError> {
        let Some(prev) = self.prev else {
            return Err(self.unexpected(offset));
        };
        let here = self.pending.take().map(|(o, _)| o);
        match self.rings.remove(&ring) {
            None => {
                self.rings.insert(ring, (prev, here, offset));
            }
            Some((other, there, _)) => {
                let order = match (here, there) {
                    (Some(a), Some(b)) if a != b => return Err(self.unexpected(offset)),
                    (Some(a), _) | (None, Some(a)) => a,
                    (None, None) => self.implicit_order(other, prev),
                };
                let duplicate = self.bonds.iter().any(|b| {
                    (b.begin == other && b.end == prev) || (b.begin == prev && b.end == other)
                });
                if other == prev || duplicate {
                    return Err(self.unexpected(offset));
                }
                self.bonds.push(Bond {
                    begin: other,
                    end: prev,
                    order,
                });
            }
        }
        Ok(())
    }

    fn organic_atom(&mut self) -> Result<Atom, SmilesError> {
        let start = self.pos;
        let rest = &self.input[start..];
        let (sym, aromatic, len): (&str, bool, usize) = match rest {
            [b'C', b'l', ..] => ("Cl", false, 2),
            [b'B', b'r', ..] => ("Br", false, 2),
            [b'B', ..] => ("B", false, 1),
            [b'C', ..] => ("C", false, 1),
            [b'N', ..] => ("N", false, 1),
            [b'O', ..] => ("O", false, 1),
            [b'P', ..] => ("P", false, 1),
            [b'S', ..] => ("S", false, 1),
            [b'F', ..] => ("F", false, 1),
            [b'I', ..] => ("I", false, 1),
            [b'b', ..] => ("B", true, 1),
            [b'c', ..] => ("C", true, 1),
            [b'n', ..] => ("N", true, 1),
            [b'o', ..] => ("O", true, 1),
            [b'p', ..] => ("P", true, 1),
            [b's', ..] => ("S", true, 1),
            _ => {
                // report the whole UTF-8 character, not a partial byte
                let len = std::str::from_utf8(rest)
                    .ok()
                    .and_then(|s| s.chars().next())
                    .map_or(1, char::len_utf8);
                return Err(self.unknown(start, len));
            }
        };
        self.pos += len;
        Ok(Atom {
            element: Element::from_symbol(sym).expect("organic subset"),
            aromatic,
            formal_charge: 0,
        })
    }

    fn bracket_atom(&mut self) -> Result<Atom, SmilesError> {
        let open = self.pos;
        let close = self.input[open..]
            .iter()
            .position(|&b| b == b']')
            .map(|i| open + i)
            .ok_or_else(|| self.unknown(open, 1))?;
        let body = &self.input[open + 1..close];
        let at = |i: usize| open + 1 + i;
        let mut i = 0;

        if body.first().is_some_and(u8::is_ascii_digit) {
            // isotopes are not supported
            return Err(self.unknown(at(0), 1));
        }

        let (element, aromatic) = match body {
            [b's', b'e', ..] => {
                i = 2;
                (Element::from_symbol("Se"), true)
            }
            [b'a', b's', ..] => {
                i = 2;
                (Element::from_symbol("As"), true)
            }
            [c @ (b'b' | b'c' | b'n' | b'o' | b'p' | b's'), ..] => {
                i = 1;
                let upper = (*c as char).to_ascii_uppercase().to_string();
                (Element::from_symbol(&upper), true)
            }
            [u, rest @ ..] if u.is_ascii_uppercase() => {
                let two = rest
                    .first()
                    .filter(|l| l.is_ascii_lowercase())
                    .and_then(|&l| {
                        let s = format!("{}{}", *u as char, l as char);
                        Element::from_symbol(&s)
                    });
                match two {
                    Some(e) => {
                        i = 2;
                        (Some(e), false)
                    }
                    None => {
                        i = 1;
                        (Element::from_symbol(&(*u as char).to_string()), false)
                    }
                }
            }
            _ => (None, false),
        };
        let Some(element) = element else {
            return Err(self.unknown(at(0), i.max(1)));
        };

        if body.get(i) == Some(&b'@') {
            return Err(self.unknown(at(i), 1));
        }
        if body.get(i) == Some(&b'H') {
            i += 1;
            while body.get(i).is_some_and(u8::is_ascii_digit) {
                i += 1;
            }
        }
        let mut charge: i32 = 0;
        if let Some(&sign @ (b'+' | b'-')) = body.get(i) {
            let unit = if sign == b'+' { 1 } else { -1 };
            i += 1;
            let digits_start = i;
            while body.get(i).is_some_and(u8::is_ascii_digit) {
                i += 1;
            }
            if i > digits_start {
                let n: i32 = std::str::from_utf8(&body[digits_start..i])
                    .expect("ascii digits")
                    .parse()
                    .map_err(|_| self.unknown(at(digits_start), i - digits_start))?;
                charge = unit * n;
            } else {
                charge = unit;
                while body.get(i) == Some(&sign) {
                    charge += unit;
                    i += 1;
                }
            }
        }
        if i != body.len() {
            return Err(self.unknown(at(i), 1));
        }
        let formal_charge =
            i8::try_from(charge).map_err(|_| self.unknown(at(0), body.len()))?;
        self.pos = close + 1;
        Ok(Atom {
            element,
            aromatic,
            formal_charge,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("atom vocabulary is full ({capacity} types); cannot add {key}")]
pub struct VocabularyOverflow {
    pub capacity: usize,
    pub key: AtomKey,
}

/// Assigns stable small integers to atom types.
///
/// Indices are handed out in first-seen order, so building the vocabulary
/// from the same corpus in the same order always gives the same mapping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "VocabularyRepr", from = "VocabularyRepr")]
pub struct AtomVocabulary {
    capacity: usize,
    index: BTreeMap<AtomKey, usize>,
}

/// On-disk form: keys listed in index order.
#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    capacity: usize,
    types: Vec<AtomKey>,
}

impl From<AtomVocabulary> for VocabularyRepr {
    fn from(v: AtomVocabulary) -> Self {
        let mut types: Vec<(usize, AtomKey)> = v.index.into_iter().map(|(k, i)| (i, k)).collect();
        types.sort();
        Self {
            capacity: v.capacity,
            types: types.into_iter().map(|(_, k)| k).collect(),
        }
    }
}

impl From<VocabularyRepr> for AtomVocabulary {
    fn from(r: VocabularyRepr) -> Self {
        Self {
            capacity: r.capacity,
            index: r.types.into_iter().enumerate().map(|(i, k)| (k, i)).collect(),
        }
    }
}

impl AtomVocabulary {
    pub const DEFAULT_CAPACITY: usize = 256;

    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            index: BTreeMap::new(),
        }
    }

    pub fn from_molecules<'a>(
        mols: impl IntoIterator<Item = &'a MolecularGraph>,
        capacity: usize,
    ) -> Result<Self, VocabularyOverflow> {
        let mut vocab = Self::new(capacity);
        for m in mols {
            for a in &m.atoms {
                vocab.insert(a)?;
            }
        }
        Ok(vocab)
    }

    /// Index of `atom`'s type, adding it when unseen.
    pub fn insert(&mut self, atom: &Atom) -> Result<usize, VocabularyOverflow> {
        let key = atom.key();
        if let Some(&i) = self.index.get(&key) {
            return Ok(i);
        }
        if self.index.len() >= self.capacity {
            return Err(VocabularyOverflow {
                capacity: self.capacity,
                key,
            });
        }
        let i = self.index.len();
        self.index.insert(key, i);
        Ok(i)
    }

    pub fn get(&self, atom: &Atom) -> Option<usize> {
        self.index.get(&atom.key()).copied()
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn entries(&self) -> impl Iterator<Item = (AtomKey, usize)> + '_ {
        self.index.iter().map(|(k, v)| (*k, *v))
    }
}

/// Returns the type index of `atom` in `vocab`, inserting it when new.
pub fn atom_type_index(vocab: &mut AtomVocabulary, atom: &Atom) -> Result<usize, VocabularyOverflow> {
    vocab.insert(atom)
}

/// One line of a molecule corpus file.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusLine {
    pub line_number: usize,
    pub smiles: String,
    pub labels: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct CorpusError {
    pub line: usize,
    pub message: String,
}

/// Reads `SMILES[<TAB>label]*` lines. Blank lines and lines starting with
/// `#` are skipped; an empty label cell is a missing label.
pub fn read_corpus(text: &str) -> Result<Vec<CorpusLine>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_number = i + 1;
        let trimmed = line.trim_end_matches('\r');
        if trimmed.trim().is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut cols = trimmed.split('\t');
        let smiles = cols.next().unwrap_or_default().trim().to_string();
        let labels = cols
            .map(|c| {
                let c = c.trim();
                if c.is_empty() {
                    Ok(None)
                } else {
                    c.parse::<f64>().map(Some).map_err(|_| CorpusError {
                        line: line_number,
                        message: format!("label `{c}` is not a number"),
                    })
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        out.push(CorpusLine {
            line_number,
            smiles,
            labels,
        });
    }
    Ok(out)
}
