//! Knowledge-aware message passing over augmented graphs.
//!
//! Each round, every atom aggregates two kinds of attention-weighted
//! messages: from attribute neighbors through `W0` and from bonded atoms
//! through `W1`. Attention is softmax-normalized separately per kind over
//! the receiving atom's in-neighbors. Atoms are updated with a GRU;
//! attribute nodes keep their initial hidden state.

use numcore::{Axis, ParameterSet, Tape, Tensor, Var};
use rand::Rng;

use super::set2set::{init_set2set, set2set};
use super::tables::{ATOM_DIM, ATOM_TABLE, ATTR_DIM, ATTR_TABLE, BOND_DIM, BOND_TABLE, REL_DIM, REL_TABLE};
use super::{init_linear, linear, EncodeError, EncoderConfig, FeatureTables, Result};
use crate::augment::{AugNode, AugmentedGraph, EdgeLabel};

/// Index arrays for a batch of augmented graphs laid out block-diagonally.
/// Atoms and attribute nodes are numbered separately across the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct KmpnnBatch {
    pub graphs: usize,
    pub atom_rows: Vec<usize>,
    pub atom_graph: Vec<usize>,
    /// First atom of each graph, plus the total at the end.
    pub atom_offsets: Vec<usize>,
    pub attr_rows: Vec<usize>,
    pub attr_graph: Vec<usize>,
    pub attr_offsets: Vec<usize>,
    /// Relation edges: attribute node -> atom.
    pub rel_src: Vec<usize>,
    pub rel_dst: Vec<usize>,
    pub rel_rows: Vec<usize>,
    /// Bond edges, each bond in both directions: atom -> atom.
    pub bond_src: Vec<usize>,
    pub bond_dst: Vec<usize>,
    pub bond_rows: Vec<usize>,
}

impl KmpnnBatch {
    pub fn new(graphs: &[&AugmentedGraph], tables: &FeatureTables) -> Result<Self> {
        if graphs.is_empty() {
            return Err(EncodeError::EmptyBatch);
        }
        let mut b = KmpnnBatch {
            graphs: graphs.len(),
            atom_rows: vec![],
            atom_graph: vec![],
            atom_offsets: vec![0],
            attr_rows: vec![],
            attr_graph: vec![],
            attr_offsets: vec![0],
            rel_src: vec![],
            rel_dst: vec![],
            rel_rows: vec![],
            bond_src: vec![],
            bond_dst: vec![],
            bond_rows: vec![],
        };
        for (gi, g) in graphs.iter().enumerate() {
            let atom0 = b.atom_rows.len();
            let attr0 = b.attr_rows.len();
            let n_atoms = g.atom_count();
            for node in &g.nodes {
                match node {
                    AugNode::Atom(i) => {
                        b.atom_rows.push(tables.atom_row(&g.origin.atoms[*i])?);
                        b.atom_graph.push(gi);
                    }
                    AugNode::Attribute(name) => {
                        b.attr_rows.push(tables.attribute_row(name)?);
                        b.attr_graph.push(gi);
                    }
                }
            }
            for e in &g.edges {
                match &e.label {
                    EdgeLabel::Bond(order) => {
                        for (s, d) in [(e.source, e.target), (e.target, e.source)] {
                            b.bond_src.push(atom0 + s);
                            b.bond_dst.push(atom0 + d);
                            b.bond_rows.push(order.type_index());
                        }
                    }
                    EdgeLabel::Relation(rel) => {
                        b.rel_src.push(attr0 + e.source - n_atoms);
                        b.rel_dst.push(atom0 + e.target);
                        b.rel_rows.push(tables.relation_row(rel)?);
                    }
                }
            }
            b.atom_offsets.push(b.atom_rows.len());
            b.attr_offsets.push(b.attr_rows.len());
        }
        Ok(b)
    }

    pub fn atoms(&self) -> usize {
        self.atom_rows.len()
    }

    pub fn attrs(&self) -> usize {
        self.attr_rows.len()
    }
}

pub struct KmpnnOutput<'t> {
    /// `[graphs, 2 * hidden]`
    pub embedding: Var<'t>,
    /// Final atom hidden states `[atoms, hidden]`.
    pub atom_hidden: Var<'t>,
    /// Attribute hidden states `[attrs, hidden]` (never updated).
    pub attr_hidden: Option<Var<'t>>,
    /// Attention over attribute neighbors in the last round, one row per
    /// relation edge.
    pub alpha: Option<Var<'t>>,
    /// Attention over atom neighbors in the last round, one row per directed
    /// bond edge.
    pub beta: Option<Var<'t>>,
}

pub fn init_kmpnn(params: &mut ParameterSet, cfg: &EncoderConfig, rng: &mut impl Rng) -> Result<()> {
    let h = cfg.kmpnn_hidden;
    init_linear(params, "kmpnn.in_atom", ATOM_DIM, h, rng)?;
    init_linear(params, "kmpnn.in_attr", ATTR_DIM, h, rng)?;
    for class in ["att_attr", "att_atom"] {
        params.insert(format!("kmpnn.{class}.w"), Tensor::glorot(h, h, rng))?;
        params.insert(format!("kmpnn.{class}.a_c"), Tensor::glorot(h, 1, rng))?;
        params.insert(format!("kmpnn.{class}.a_n"), Tensor::glorot(h, 1, rng))?;
    }
    params.insert("kmpnn.w0", Tensor::glorot(REL_DIM, h, rng))?;
    params.insert("kmpnn.w1", Tensor::glorot(BOND_DIM, h, rng))?;
    for g in ["r", "z", "n"] {
        params.insert(format!("kmpnn.gru.w{g}"), Tensor::glorot(h, h, rng))?;
        params.insert(format!("kmpnn.gru.u{g}"), Tensor::glorot(h, h, rng))?;
        params.insert(format!("kmpnn.gru.b{g}"), Tensor::zeros(1, h))?;
    }
    params.insert("kmpnn.gru.bun", Tensor::zeros(1, h))?;
    init_set2set(params, "kmpnn.s2s", h, rng)
}

/// Attention of one class for edges `src -> dst`: softmax over each
/// receiving atom's in-edges of `LeakyReLU(a_c . W h_dst + a_n . W h_src)`.
#[allow(clippy::too_many_arguments)]
fn edge_attention<'t>(
    tape: &'t Tape,
    params: &ParameterSet,
    class: &str,
    dst_hidden: Var<'t>,
    src_hidden: Var<'t>,
    src: &[usize],
    dst: &[usize],
    slope: f64,
) -> Result<Var<'t>> {
    let w = tape.param(params, &format!("kmpnn.{class}.w"))?;
    let a_c = tape.param(params, &format!("kmpnn.{class}.a_c"))?;
    let a_n = tape.param(params, &format!("kmpnn.{class}.a_n"))?;
    let center = dst_hidden.matmul(w)?.matmul(a_c)?;
    let neighbor = src_hidden.matmul(w)?.matmul(a_n)?;
    let logits = center
        .gather_rows(dst)?
        .add(neighbor.gather_rows(src)?)?
        .leaky_relu(slope)?;
    Ok(logits.segment_softmax(dst)?)
}

/// Sum over edges of `coeff * (W e) * h_src`, scattered onto receiving atoms.
fn messages<'t>(
    w: Var<'t>,
    edge_feats: Var<'t>,
    src_hidden: Var<'t>,
    coeff: Var<'t>,
    src: &[usize],
    dst: &[usize],
    atoms: usize,
) -> Result<Var<'t>> {
    Ok(edge_feats
        .matmul(w)?
        .mul(src_hidden.gather_rows(src)?)?
        .scale_rows(coeff)?
        .scatter_add_rows(dst, atoms)?)
}

fn gru<'t>(tape: &'t Tape, params: &ParameterSet, h: Var<'t>, m: Var<'t>) -> Result<Var<'t>> {
    let p = |n: &str| tape.param(params, &format!("kmpnn.gru.{n}"));
    let gate = |g: &str| -> Result<Var<'t>> {
        Ok(m.matmul(p(&format!("w{g}"))?)?
            .add(h.matmul(p(&format!("u{g}"))?)?)?
            .add_row(p(&format!("b{g}"))?)?
            .sigmoid()?)
    };
    let r = gate("r")?;
    let z = gate("z")?;
    let n = m
        .matmul(p("wn")?)?
        .add_row(p("bn")?)?
        .add(r.mul(h.matmul(p("un")?)?.add_row(p("bun")?)?)?)?
        .tanh()?;
    // (1 - z) * n + z * h
    Ok(n.add(z.mul(h.sub(n)?)?)?)
}

pub fn kmpnn_encode<'t>(
    tape: &'t Tape,
    params: &ParameterSet,
    batch: &KmpnnBatch,
    cfg: &EncoderConfig,
) -> Result<KmpnnOutput<'t>> {
    let atoms = batch.atoms();
    let slope = cfg.leaky_slope;
    let atom_x = tape.param(params, ATOM_TABLE)?.gather_rows(&batch.atom_rows)?;
    let mut h = linear(tape, params, "kmpnn.in_atom", atom_x)?;

    let has_rel = !batch.rel_src.is_empty();
    let has_bond = !batch.bond_src.is_empty();
    let attr_h = if batch.attrs() > 0 {
        let x = tape.param(params, ATTR_TABLE)?.gather_rows(&batch.attr_rows)?;
        Some(linear(tape, params, "kmpnn.in_attr", x)?)
    } else {
        None
    };
    let rel_e = if has_rel {
        Some(tape.param(params, REL_TABLE)?.gather_rows(&batch.rel_rows)?)
    } else {
        None
    };
    let bond_e = if has_bond {
        Some(tape.param(params, BOND_TABLE)?.gather_rows(&batch.bond_rows)?)
    } else {
        None
    };

    let mut alpha = None;
    let mut beta = None;
    for _ in 0..cfg.kmpnn_steps {
        let mut m = tape.constant(Tensor::zeros(atoms, cfg.kmpnn_hidden))?;
        if let (Some(ah), Some(re)) = (attr_h, rel_e) {
            let a = edge_attention(tape, params, "att_attr", h, ah, &batch.rel_src, &batch.rel_dst, slope)?;
            let w0 = tape.param(params, "kmpnn.w0")?;
            m = m.add(messages(w0, re, ah, a, &batch.rel_src, &batch.rel_dst, atoms)?)?;
            alpha = Some(a);
        }
        if let Some(be) = bond_e {
            let b = edge_attention(tape, params, "att_atom", h, h, &batch.bond_src, &batch.bond_dst, slope)?;
            let w1 = tape.param(params, "kmpnn.w1")?;
            m = m.add(messages(w1, be, h, b, &batch.bond_src, &batch.bond_dst, atoms)?)?;
            beta = Some(b);
        }
        h = gru(tape, params, h, m)?;
    }
    let readout = set2set(
        tape,
        params,
        "kmpnn.s2s",
        h,
        &batch.atom_graph,
        batch.graphs,
        cfg.set2set_steps,
    )?;
    Ok(KmpnnOutput {
        embedding: readout.embedding,
        atom_hidden: h,
        attr_hidden: attr_h,
        alpha,
        beta,
    })
}

/// Reference form of the attention coefficients for one receiving node:
/// `softmax_u LeakyReLU(a^T [W h_center || W h_u])`. `a` has length
/// `2 * W.cols()`, center half first.
pub fn attention_coeffs(
    center: &[f64],
    neighbors: &[&[f64]],
    a: &[f64],
    w: &Tensor,
    slope: f64,
) -> Result<Vec<f64>> {
    if neighbors.is_empty() {
        return Err(EncodeError::EmptyNeighborhood);
    }
    let d = w.cols();
    if a.len() != 2 * d || center.len() != w.rows() {
        return Err(numcore::NumError::ShapeMismatch {
            op: "attention_coeffs",
            left: w.shape(),
            right: numcore::Shape::new(1, a.len()),
        }
        .into());
    }
    let wc = Tensor::row(center).matmul(w)?;
    let left: f64 = wc.data().iter().zip(&a[..d]).map(|(x, y)| x * y).sum();
    let mut logits = Vec::with_capacity(neighbors.len());
    for n in neighbors {
        let wn = Tensor::row(n).matmul(w)?;
        let right: f64 = wn.data().iter().zip(&a[d..]).map(|(x, y)| x * y).sum();
        let s = left + right;
        logits.push(if s > 0.0 { s } else { slope * s });
    }
    Ok(numcore::tape::softmax(&Tensor::row(&logits), Axis::Cols).into_data())
}

fn message(edge_hidden: &[f64], neighbor_hidden: &[f64], coeff: f64, w: &Tensor) -> Result<Vec<f64>> {
    let we = Tensor::row(edge_hidden).matmul(w)?;
    if we.cols() != neighbor_hidden.len() {
        return Err(numcore::NumError::ShapeMismatch {
            op: "message",
            left: we.shape(),
            right: numcore::Shape::new(1, neighbor_hidden.len()),
        }
        .into());
    }
    Ok(we
        .data()
        .iter()
        .zip(neighbor_hidden)
        .map(|(x, y)| coeff * x * y)
        .collect())
}

/// Attribute-neighbor message `alpha * (e W0) * h_u` for a single edge.
pub fn msg_attr(edge_hidden: &[f64], neighbor_hidden: &[f64], alpha: f64, w0: &Tensor) -> Result<Vec<f64>> {
    message(edge_hidden, neighbor_hidden, alpha, w0)
}

/// Atom-neighbor message `beta * (e W1) * h_u` for a single edge.
pub fn msg_atom(edge_hidden: &[f64], neighbor_hidden: &[f64], beta: f64, w1: &Tensor) -> Result<Vec<f64>> {
    message(edge_hidden, neighbor_hidden, beta, w1)
}
