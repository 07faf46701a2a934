//! Rotation-model embeddings of the element knowledge graph.
//!
//! Entities live in `C^k` (stored as separate real and imaginary tables),
//! relations are `k` phases. A triple is scored by
//! `sum_j |h_j * exp(i r_j) - t_j|`, the sum of complex moduli.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

use numcore::{AdamConfig, Axis, NumError, ParameterSet, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::elementkg::{ElementKG, Triple};

/// Norm convention recorded in embedding files.
pub const NORM_CONVENTION: &str = "l1-complex-modulus";

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("unknown entity `{0}`")]
    UnknownEntity(String),
    #[error("unknown relation `{0}`")]
    UnknownRelation(String),
    #[error("knowledge graph has no triples")]
    EmptyKG,
    #[error("embedding dimension must be positive and even, got {0}")]
    NonPositiveDim(usize),
    #[error("embedding does not cover the graph: missing `{0}`")]
    VocabularyMismatch(String),
    #[error("cannot corrupt triples: {0}")]
    NoCorruptions(String),
    #[error("embedding file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Num(#[from] NumError),
}

pub type Result<T, E = EmbedError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KgEmbedding {
    entity_names: Vec<String>,
    relation_names: Vec<String>,
    /// `[entities, k]`
    entity_re: Tensor,
    /// `[entities, k]`
    entity_im: Tensor,
    /// `[relations, k]`, wrapped into `(-pi, pi]`
    phases: Tensor,
    #[serde(skip)]
    entity_index: BTreeMap<String, usize>,
    #[serde(skip)]
    relation_index: BTreeMap<String, usize>,
}

impl KgEmbedding {
    /// Uniform initialization: entity parts in `[-scale, scale]`, phases in `(-pi, pi]`.
    pub fn random(
        entity_names: Vec<String>,
        relation_names: Vec<String>,
        dim: usize,
        scale: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if dim == 0 || !dim.is_multiple_of(2) {
            return Err(EmbedError::NonPositiveDim(dim));
        }
        let k = dim / 2;
        let entity_re = Tensor::uniform(entity_names.len(), k, scale, rng);
        let entity_im = Tensor::uniform(entity_names.len(), k, scale, rng);
        let phases = Tensor::uniform(relation_names.len(), k, PI, rng).map(wrap_phase);
        Ok(Self::from_parts(entity_names, relation_names, entity_re, entity_im, phases))
    }

    fn from_parts(
        entity_names: Vec<String>,
        relation_names: Vec<String>,
        entity_re: Tensor,
        entity_im: Tensor,
        phases: Tensor,
    ) -> Self {
        let mut emb = Self {
            entity_names,
            relation_names,
            entity_re,
            entity_im,
            phases,
            entity_index: BTreeMap::new(),
            relation_index: BTreeMap::new(),
        };
        emb.reindex();
        emb
    }

    fn reindex(&mut self) {
        self.entity_index = self
            .entity_names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        self.relation_index = self
            .relation_names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
    }

    /// Number of complex components.
    pub fn complex_dim(&self) -> usize {
        self.phases.cols()
    }

    /// Real entity dimension (twice the complex dimension).
    pub fn entity_dim(&self) -> usize {
        2 * self.complex_dim()
    }

    pub fn relation_dim(&self) -> usize {
        self.complex_dim()
    }

    pub fn entity_names(&self) -> &[String] {
        &self.entity_names
    }

    pub fn relation_names(&self) -> &[String] {
        &self.relation_names
    }

    pub fn entity_id(&self, name: &str) -> Result<usize> {
        self.entity_index
            .get(name)
            .copied()
            .ok_or_else(|| EmbedError::UnknownEntity(name.to_string()))
    }

    pub fn relation_id(&self, name: &str) -> Result<usize> {
        self.relation_index
            .get(name)
            .copied()
            .ok_or_else(|| EmbedError::UnknownRelation(name.to_string()))
    }

    /// Real entity feature: real parts followed by imaginary parts.
    pub fn entity_feature(&self, name: &str) -> Result<Vec<f64>> {
        let i = self.entity_id(name)?;
        let mut v = self.entity_re.row_slice(i).to_vec();
        v.extend_from_slice(self.entity_im.row_slice(i));
        Ok(v)
    }

    pub fn phases_of(&self, name: &str) -> Result<&[f64]> {
        Ok(self.phases.row_slice(self.relation_id(name)?))
    }

    /// Relation feature of width `dim`: the phase vector itself when the
    /// widths agree, otherwise the phases through a fixed random projection
    /// drawn from `seed`.
    pub fn relation_feature(&self, name: &str, dim: usize, seed: u64) -> Result<Vec<f64>> {
        let phases = self.phases_of(name)?;
        let k = phases.len();
        if dim == k {
            return Ok(phases.to_vec());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let proj = Tensor::uniform(k, dim, (3.0 / k as f64).sqrt(), &mut rng);
        let row = Tensor::row(phases);
        Ok(row.matmul(&proj)?.into_data())
    }

    /// Raw parts for inspection: `(re, im, phases)`.
    pub fn tables(&self) -> (&Tensor, &Tensor, &Tensor) {
        (&self.entity_re, &self.entity_im, &self.phases)
    }

    pub fn tables_mut(&mut self) -> (&mut Tensor, &mut Tensor, &mut Tensor) {
        (&mut self.entity_re, &mut self.entity_im, &mut self.phases)
    }

    fn score_ids(&self, h: usize, r: usize, t: usize) -> f64 {
        let (hr, hi) = (self.entity_re.row_slice(h), self.entity_im.row_slice(h));
        let (tr, ti) = (self.entity_re.row_slice(t), self.entity_im.row_slice(t));
        let ph = self.phases.row_slice(r);
        let mut s = 0.0;
        for j in 0..ph.len() {
            let (sn, cs) = ph[j].sin_cos();
            let dr = hr[j] * cs - hi[j] * sn - tr[j];
            let di = hr[j] * sn + hi[j] * cs - ti[j];
            s += dr.hypot(di);
        }
        s
    }

    /// Text form: a header with dims and norm, then one line per entity
    /// (`E`) or relation (`R`): `kind<TAB>name<TAB>values`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# rotate-embedding v1");
        let _ = writeln!(
            out,
            "# entity_dim={} relation_dim={} norm={} entities={} relations={}",
            self.entity_dim(),
            self.relation_dim(),
            NORM_CONVENTION,
            self.entity_names.len(),
            self.relation_names.len()
        );
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ");
        for (i, name) in self.entity_names.iter().enumerate() {
            let mut v = self.entity_re.row_slice(i).to_vec();
            v.extend_from_slice(self.entity_im.row_slice(i));
            let _ = writeln!(out, "E\t{name}\t{}", join(&v));
        }
        for (i, name) in self.relation_names.iter().enumerate() {
            let _ = writeln!(out, "R\t{name}\t{}", join(self.phases.row_slice(i)));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut ents = Vec::new();
        let mut rels = Vec::new();
        let (mut re, mut im, mut ph) = (Vec::new(), Vec::new(), Vec::new());
        let mut k = None;
        for (i, line) in text.lines().enumerate() {
            let err = |message: String| EmbedError::Parse { line: i + 1, message };
            if line.starts_with('#') {
                if let Some(rest) = line.strip_prefix("# entity_dim=") {
                    let d: usize = rest
                        .split_whitespace()
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| err("bad entity_dim".into()))?;
                    if !line.contains(&format!("norm={NORM_CONVENTION}")) {
                        return Err(err("unsupported norm convention".into()));
                    }
                    k = Some(d / 2);
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let k = k.ok_or_else(|| err("missing header".into()))?;
            let parts: Vec<&str> = line.split('\t').collect();
            if parts.len() != 3 {
                return Err(err("expected kind, name and values".into()));
            }
            let values = parts[2]
                .split(' ')
                .map(|x| x.parse::<f64>().map_err(|_| err(format!("bad number `{x}`"))))
                .collect::<Result<Vec<_>>>()?;
            match parts[0] {
                "E" if values.len() == 2 * k => {
                    ents.push(parts[1].to_string());
                    re.extend_from_slice(&values[..k]);
                    im.extend_from_slice(&values[k..]);
                }
                "R" if values.len() == k => {
                    rels.push(parts[1].to_string());
                    ph.extend_from_slice(&values);
                }
                _ => return Err(err("bad row kind or width".into())),
            }
        }
        let k = k.ok_or(EmbedError::Parse {
            line: 0,
            message: "missing header".into(),
        })?;
        let re = Tensor::from_vec(ents.len(), k, re)?;
        let im = Tensor::from_vec(ents.len(), k, im)?;
        let ph = Tensor::from_vec(rels.len(), k, ph)?;
        Ok(Self::from_parts(ents, rels, re, im, ph))
    }
}

/// Maps an angle into `(-pi, pi]`.
pub fn wrap_phase(x: f64) -> f64 {
    let y = x - 2.0 * PI * (x / (2.0 * PI)).round();
    if y <= -PI {
        y + 2.0 * PI
    } else {
        y
    }
}

/// `sum_j |h_j r_j - t_j|` for a named triple.
pub fn rotate_score(emb: &KgEmbedding, triple: &Triple) -> Result<f64> {
    let h = emb.entity_id(&triple.head)?;
    let t = emb.entity_id(&triple.tail)?;
    let r = emb.relation_id(&triple.relation)?;
    Ok(emb.score_ids(h, r, t))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotateConfig {
    /// Real entity dimension; relations get `dim / 2` phases.
    pub dim: usize,
    pub epochs: usize,
    pub lr: f64,
    pub margin: f64,
    pub negatives_per_positive: usize,
    pub batch_size: usize,
    /// Entity initialization range `[-init_scale, init_scale]`.
    pub init_scale: f64,
    /// Self-adversarial negative weighting temperature; `None` gives
    /// uniform weights.
    pub adversarial_temperature: Option<f64>,
    pub seed: u64,
}

impl Default for RotateConfig {
    fn default() -> Self {
        Self {
            dim: 128,
            epochs: 200,
            lr: 0.01,
            margin: 6.0,
            negatives_per_positive: 8,
            batch_size: 256,
            init_scale: 0.5,
            adversarial_temperature: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RotateReport {
    /// Mean margin loss per epoch.
    pub epoch_losses: Vec<f64>,
}

const SCORE_EPS: f64 = 1e-9;

struct Index {
    heads: Vec<usize>,
    rels: Vec<usize>,
    tails: Vec<usize>,
}

/// Per-row scores on the record, shape `[n, 1]`.
fn score_rows<'t>(
    re: Var<'t>,
    im: Var<'t>,
    ph: Var<'t>,
    idx: &Index,
) -> numcore::Result<Var<'t>> {
    let hr = re.gather_rows(&idx.heads)?;
    let hi = im.gather_rows(&idx.heads)?;
    let tr = re.gather_rows(&idx.tails)?;
    let ti = im.gather_rows(&idx.tails)?;
    let p = ph.gather_rows(&idx.rels)?;
    let (c, s) = (p.cos()?, p.sin()?);
    let dr = hr.mul(c)?.sub(hi.mul(s)?)?.sub(tr)?;
    let di = hr.mul(s)?.add(hi.mul(c)?)?.sub(ti)?;
    dr.mul(dr)?
        .add(di.mul(di)?)?
        .add_scalar(SCORE_EPS)?
        .sqrt()?
        .sum_axis(Axis::Cols)
}

/// Trains entity and relation embeddings with a margin ranking loss.
/// Negatives replace the head by another attribute or the tail by another
/// element, each with probability 1/2.
pub fn train_rotate(kg: &ElementKG, cfg: &RotateConfig) -> Result<(KgEmbedding, RotateReport)> {
    if kg.triples().is_empty() {
        return Err(EmbedError::EmptyKG);
    }
    if cfg.dim == 0 || !cfg.dim.is_multiple_of(2) {
        return Err(EmbedError::NonPositiveDim(cfg.dim));
    }
    let attributes: Vec<String> = kg.attributes().map(str::to_string).collect();
    let elements: Vec<String> = kg.elements().map(str::to_string).collect();
    let entity_names: Vec<String> = attributes.iter().chain(&elements).cloned().collect();
    let relation_names: Vec<String> = kg.relation_types().map(str::to_string).collect();
    let n_attr = attributes.len();
    let n_elem = elements.len();
    if n_attr < 2 && n_elem < 2 {
        return Err(EmbedError::NoCorruptions(
            "need at least two attributes or two elements".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut emb = KgEmbedding::random(entity_names, relation_names, cfg.dim, cfg.init_scale, &mut rng)?;
    let positives: Vec<(usize, usize, usize)> = kg
        .triples()
        .iter()
        .map(|t| {
            Ok((
                emb.entity_id(&t.head)?,
                emb.relation_id(&t.relation)?,
                emb.entity_id(&t.tail)?,
            ))
        })
        .collect::<Result<_>>()?;

    let mut params = ParameterSet::new();
    params.insert("re", emb.entity_re.clone())?;
    params.insert("im", emb.entity_im.clone())?;
    params.insert("phase", emb.phases.clone())?;
    let adam = AdamConfig::with_lr(cfg.lr);
    let neg = cfg.negatives_per_positive.max(1);
    let batch = cfg.batch_size.max(1);

    let mut order: Vec<usize> = (0..positives.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            let mut pos = Index { heads: vec![], rels: vec![], tails: vec![] };
            let mut negs = Index { heads: vec![], rels: vec![], tails: vec![] };
            let mut owner = Vec::with_capacity(chunk.len() * neg);
            for (b, &i) in chunk.iter().enumerate() {
                let (h, r, t) = positives[i];
                pos.heads.push(h);
                pos.rels.push(r);
                pos.tails.push(t);
                for _ in 0..neg {
                    let corrupt_head = n_elem < 2 || (n_attr >= 2 && rng.gen_bool(0.5));
                    let (nh, nt) = if corrupt_head {
                        let mut c = rng.gen_range(0..n_attr - 1);
                        if c >= h {
                            c += 1;
                        }
                        (c, t)
                    } else {
                        let te = t - n_attr;
                        let mut c = rng.gen_range(0..n_elem - 1);
                        if c >= te {
                            c += 1;
                        }
                        (h, n_attr + c)
                    };
                    negs.heads.push(nh);
                    negs.rels.push(r);
                    negs.tails.push(nt);
                    owner.push(b);
                }
            }
            let tape = Tape::new();
            let re = tape.param(&params, "re")?;
            let im = tape.param(&params, "im")?;
            let ph = tape.param(&params, "phase")?;
            let d_pos = score_rows(re, im, ph, &pos)?;
            let d_neg = score_rows(re, im, ph, &negs)?;
            let hinge = d_pos
                .gather_rows(&owner)?
                .sub(d_neg)?
                .add_scalar(cfg.margin)?
                .relu()?;
            let loss = match cfg.adversarial_temperature {
                None => hinge.mean()?,
                Some(alpha) => {
                    let w = adversarial_weights(&d_neg.value(), &owner, chunk.len(), alpha);
                    let w = tape.constant(w)?;
                    hinge.mul(w)?.sum()?.scale(1.0 / chunk.len() as f64)?
                }
            };
            total += loss.item() * chunk.len() as f64;
            tape.backward_into(loss, &mut params)?;
            params.adam_step(&adam)?;
            for x in params.value_mut("phase")?.data_mut() {
                *x = wrap_phase(*x);
            }
        }
        epoch_losses.push(total / positives.len() as f64);
    }
    emb.entity_re = params.value("re")?.clone();
    emb.entity_im = params.value("im")?.clone();
    emb.phases = params.value("phase")?.clone();
    Ok((emb, RotateReport { epoch_losses }))
}

/// Softmax of `-alpha * distance` within each positive's negatives.
fn adversarial_weights(d_neg: &Tensor, owner: &[usize], groups: usize, alpha: f64) -> Tensor {
    let d = d_neg.data();
    let mut max = vec![f64::NEG_INFINITY; groups];
    for (x, &g) in d.iter().zip(owner) {
        max[g] = max[g].max(-alpha * x);
    }
    let e: Vec<f64> = d.iter().zip(owner).map(|(x, &g)| (-alpha * x - max[g]).exp()).collect();
    let mut z = vec![0.0; groups];
    for (x, &g) in e.iter().zip(owner) {
        z[g] += x;
    }
    let w = e.iter().zip(owner).map(|(x, &g)| x / z[g]).collect();
    Tensor::from_vec(d.len(), 1, w).expect("column")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RankMetrics {
    pub mrr: f64,
    pub hits_at_1: f64,
    pub hits_at_3: f64,
    pub triples: usize,
}

/// Rank of the true tail among `candidates` by ascending score; ties count
/// against the true tail.
pub fn tail_rank(emb: &KgEmbedding, triple: &Triple, candidates: &[usize]) -> Result<usize> {
    let h = emb.entity_id(&triple.head)?;
    let r = emb.relation_id(&triple.relation)?;
    let t = emb.entity_id(&triple.tail)?;
    let s = emb.score_ids(h, r, t);
    Ok(1 + candidates
        .iter()
        .filter(|&&c| c != t && emb.score_ids(h, r, c) <= s)
        .count())
}

/// Raw tail-ranking diagnostics over every triple of `kg`, with all element
/// entities as candidates.
pub fn rank_eval(emb: &KgEmbedding, kg: &ElementKG) -> Result<RankMetrics> {
    for name in kg.elements().chain(kg.attributes()) {
        emb.entity_id(name)
            .map_err(|_| EmbedError::VocabularyMismatch(name.to_string()))?;
    }
    for name in kg.relation_types() {
        emb.relation_id(name)
            .map_err(|_| EmbedError::VocabularyMismatch(name.to_string()))?;
    }
    let candidates: Vec<usize> = kg.elements().map(|e| emb.entity_index[e]).collect();
    let (mut rr, mut h1, mut h3) = (0.0, 0.0, 0.0);
    for t in kg.triples() {
        let rank = tail_rank(emb, t, &candidates)?;
        rr += 1.0 / rank as f64;
        h1 += f64::from(u8::from(rank <= 1));
        h3 += f64::from(u8::from(rank <= 3));
    }
    let n = kg.triples().len().max(1) as f64;
    Ok(RankMetrics {
        mrr: rr / n,
        hits_at_1: h1 / n,
        hits_at_3: h3 / n,
        triples: kg.triples().len(),
    })
}

/// Embedding with the graph's vocabulary but untrained values.
pub fn random_embedding(kg: &ElementKG, dim: usize, seed: u64) -> Result<KgEmbedding> {
    let names: Vec<String> = kg.attributes().chain(kg.elements()).map(str::to_string).collect();
    let rels = kg.relation_types().map(str::to_string).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    KgEmbedding::random(names, rels, dim, 0.5, &mut rng)
}
