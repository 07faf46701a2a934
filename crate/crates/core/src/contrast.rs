//! Contrastive objective: projection head, circular fingerprints with
//! Tanimoto similarity, hard-negative batching, and NT-Xent.

use std::fmt::Write as _;

use numcore::{Axis, ParameterSet, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoders::{init_linear, linear};
use crate::smiles::MolecularGraph;

#[derive(Debug, Error)]
pub enum ContrastError {
    #[error("molecule has no atoms")]
    EmptyGraph,
    #[error("fingerprint lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("batch size {batch} exceeds corpus size {corpus}")]
    BatchTooLarge { batch: usize, corpus: usize },
    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),
    #[error("view sizes differ: {0} vs {1}")]
    SizeMismatch(usize, usize),
    #[error("fingerprint cache line {line}: {message}")]
    Cache { line: usize, message: String },
    #[error(transparent)]
    Encode(#[from] crate::encoders::EncodeError),
    #[error(transparent)]
    Num(#[from] numcore::NumError),
}

pub type Result<T, E = ContrastError> = std::result::Result<T, E>;

pub const DEFAULT_NBITS: usize = 2048;
pub const DEFAULT_RADIUS: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Fingerprint {
    words: Vec<u64>,
    nbits: usize,
    radius: usize,
}

impl Fingerprint {
    pub fn zeros(nbits: usize, radius: usize) -> Self {
        Self {
            words: vec![0; nbits.div_ceil(64)],
            nbits,
            radius,
        }
    }

    pub fn from_bits(nbits: usize, radius: usize, set: &[usize]) -> Self {
        let mut fp = Self::zeros(nbits, radius);
        for &b in set {
            fp.set(b);
        }
        fp
    }

    pub fn set(&mut self, bit: usize) {
        assert!(bit < self.nbits, "bit {bit} out of range");
        self.words[bit / 64] |= 1 << (bit % 64);
    }

    pub fn get(&self, bit: usize) -> bool {
        self.words[bit / 64] >> (bit % 64) & 1 == 1
    }

    pub fn nbits(&self) -> usize {
        self.nbits
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn popcount(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn on_bits(&self) -> Vec<usize> {
        (0..self.nbits).filter(|&b| self.get(b)).collect()
    }

    /// Little-endian words as hex.
    pub fn to_hex(&self) -> String {
        let bytes: Vec<u8> = self.words.iter().flat_map(|w| w.to_le_bytes()).collect();
        hex::encode(bytes)
    }

    pub fn from_hex(text: &str, nbits: usize, radius: usize) -> Option<Self> {
        let bytes = hex::decode(text).ok()?;
        if bytes.len() != nbits.div_ceil(64) * 8 {
            return None;
        }
        let words = bytes
            .chunks(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Some(Self { words, nbits, radius })
    }
}

/// The splitmix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const HASH_SEED: u64 = 0x9e37_79b9_7f4a_7c15;

pub(crate) fn hash_seq(items: impl IntoIterator<Item = u64>) -> u64 {
    items
        .into_iter()
        .fold(HASH_SEED, |h, x| mix64(h ^ mix64(x.wrapping_add(HASH_SEED))))
}

/// Circular fingerprint. Radius-0 identifiers hash (atomic number, formal
/// charge, aromatic flag); each further round hashes the previous identifier
/// with the sorted (bond type, neighbor identifier) pairs. Every identifier
/// at every radius sets bit `id mod nbits`.
pub fn morgan_fingerprint(mol: &MolecularGraph, radius: usize, nbits: usize) -> Result<Fingerprint> {
    if mol.atoms.is_empty() {
        return Err(ContrastError::EmptyGraph);
    }
    assert!(nbits > 0, "nbits must be positive");
    let mut fp = Fingerprint::zeros(nbits, radius);
    let mut ids: Vec<u64> = mol
        .atoms
        .iter()
        .map(|a| {
            hash_seq([
                u64::from(a.element.atomic_number()),
                a.formal_charge as i64 as u64,
                u64::from(a.aromatic),
            ])
        })
        .collect();
    for &id in &ids {
        fp.set((id % nbits as u64) as usize);
    }
    let mut neighbors: Vec<Vec<(usize, usize)>> = vec![Vec::new(); mol.atom_count()];
    for b in &mol.bonds {
        neighbors[b.begin].push((b.type_index(), b.end));
        neighbors[b.end].push((b.type_index(), b.begin));
    }
    for r in 1..=radius {
        let next: Vec<u64> = (0..ids.len())
            .map(|v| {
                let mut env: Vec<(u64, u64)> = neighbors[v]
                    .iter()
                    .map(|&(bt, u)| (bt as u64, ids[u]))
                    .collect();
                env.sort_unstable();
                let seq = [r as u64, ids[v]]
                    .into_iter()
                    .chain(env.into_iter().flat_map(|(a, b)| [a, b]));
                hash_seq(seq)
            })
            .collect();
        ids = next;
        for &id in &ids {
            fp.set((id % nbits as u64) as usize);
        }
    }
    Ok(fp)
}

/// `N12 / (N1 + N2 - N12)`; two empty fingerprints score 0.
pub fn tanimoto(a: &Fingerprint, b: &Fingerprint) -> Result<f64> {
    if a.nbits != b.nbits {
        return Err(ContrastError::LengthMismatch(a.nbits, b.nbits));
    }
    let n1 = a.popcount();
    let n2 = b.popcount();
    let n12: usize = a
        .words
        .iter()
        .zip(&b.words)
        .map(|(x, y)| (x & y).count_ones() as usize)
        .sum();
    let union = n1 + n2 - n12;
    Ok(if union == 0 {
        0.0
    } else {
        n12 as f64 / union as f64
    })
}

/// `index<TAB>hex` per line.
pub fn fingerprints_to_cache(fps: &[Fingerprint]) -> String {
    let mut out = String::new();
    for (i, fp) in fps.iter().enumerate() {
        let _ = writeln!(out, "{i}\t{}", fp.to_hex());
    }
    out
}

pub fn fingerprints_from_cache(text: &str, nbits: usize, radius: usize) -> Result<Vec<Fingerprint>> {
    let mut out = Vec::new();
    for (line, row) in text.lines().enumerate() {
        let err = |message: &str| ContrastError::Cache {
            line: line + 1,
            message: message.to_string(),
        };
        let (idx, hex) = row.split_once('\t').ok_or_else(|| err("missing tab"))?;
        if idx.parse::<usize>().ok() != Some(out.len()) {
            return Err(err("indices must count up from 0"));
        }
        out.push(Fingerprint::from_hex(hex, nbits, radius).ok_or_else(|| err("bad hex payload"))?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContrastBatch {
    /// Corpus indices; member `k` is paired with its own augmented view.
    pub members: Vec<usize>,
}

/// Partition-style hard batches: anchors are visited in a seeded random
/// order; each unassigned anchor takes the `n - 1` most similar unassigned
/// molecules (ties by corpus index). The final batch may be short.
pub fn build_hard_batches(fps: &[Fingerprint], n: usize, seed: u64) -> Result<Vec<ContrastBatch>> {
    if n == 0 || n > fps.len() {
        return Err(ContrastError::BatchTooLarge {
            batch: n,
            corpus: fps.len(),
        });
    }
    let mut order: Vec<usize> = (0..fps.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assigned = vec![false; fps.len()];
    let mut batches = Vec::new();
    for &anchor in &order {
        if assigned[anchor] {
            continue;
        }
        assigned[anchor] = true;
        let mut cands: Vec<(f64, usize)> = (0..fps.len())
            .filter(|&j| !assigned[j])
            .map(|j| Ok((tanimoto(&fps[anchor], &fps[j])?, j)))
            .collect::<Result<_>>()?;
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut members = vec![anchor];
        for &(_, j) in cands.iter().take(n - 1) {
            assigned[j] = true;
            members.push(j);
        }
        batches.push(ContrastBatch { members });
    }
    Ok(batches)
}

/// Seeded shuffle cut into batches of `n`, for training without mining.
pub fn build_random_batches(count: usize, n: usize, seed: u64) -> Result<Vec<ContrastBatch>> {
    if n == 0 || n > count {
        return Err(ContrastError::BatchTooLarge { batch: n, corpus: count });
    }
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(order
        .chunks(n)
        .map(|c| ContrastBatch { members: c.to_vec() })
        .collect())
}

/// Mean Tanimoto over all within-batch pairs, pooled across batches.
pub fn mean_intra_batch_tanimoto(fps: &[Fingerprint], batches: &[ContrastBatch]) -> Result<f64> {
    let (mut sum, mut pairs) = (0.0, 0usize);
    for b in batches {
        for (i, &x) in b.members.iter().enumerate() {
            for &y in &b.members[i + 1..] {
                sum += tanimoto(&fps[x], &fps[y])?;
                pairs += 1;
            }
        }
    }
    Ok(if pairs == 0 { 0.0 } else { sum / pairs as f64 })
}

/// NT-Xent over `N` positive pairs. With `S = cos(Z, Z')`,
/// `l_i = -S_ii / tau + log(sum_j exp(S_ij / tau) + sum_j exp(S_ji / tau))`,
/// averaged over `i`.
pub fn nt_xent<'t>(z: Var<'t>, z_aug: Var<'t>, tau: f64) -> Result<Var<'t>> {
    if !(tau > 0.0) {
        return Err(ContrastError::NonPositiveTemperature(tau));
    }
    let n = z.shape().rows;
    if n != z_aug.shape().rows || n == 0 {
        return Err(ContrastError::SizeMismatch(n, z_aug.shape().rows));
    }
    let tape = z.tape();
    let s = z.cosine_similarity(z_aug)?.scale(1.0 / tau)?;
    let e = s.exp()?;
    let denom = e
        .sum_axis(Axis::Cols)?
        .add(e.sum_axis(Axis::Rows)?.transpose()?)?;
    let diag = s
        .mul(tape.constant(Tensor::identity(n))?)?
        .sum_axis(Axis::Cols)?;
    Ok(denom.log()?.sub(diag)?.mean()?)
}

/// Two affine layers with a ReLU between them, shared by both views.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionHead {
    pub prefix: String,
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

impl ProjectionHead {
    pub fn new(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            prefix: "head".into(),
            input,
            hidden,
            output,
        }
    }

    pub fn init(&self, params: &mut ParameterSet, rng: &mut impl Rng) -> Result<()> {
        init_linear(params, &format!("{}.l1", self.prefix), self.input, self.hidden, rng)?;
        init_linear(params, &format!("{}.l2", self.prefix), self.hidden, self.output, rng)?;
        Ok(())
    }

    pub fn project<'t>(&self, tape: &'t Tape, params: &ParameterSet, h: Var<'t>) -> Result<Var<'t>> {
        let x = linear(tape, params, &format!("{}.l1", self.prefix), h)?.relu()?;
        Ok(linear(tape, params, &format!("{}.l2", self.prefix), x)?)
    }
}
