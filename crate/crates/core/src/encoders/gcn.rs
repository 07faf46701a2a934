//! Graph convolution over the original molecular graph with a gated
//! weighted-sum plus max-pool readout.

use numcore::{Axis, ParameterSet, Tape, Tensor, Var};
use rand::Rng;

use super::tables::{ATOM_DIM, ATOM_TABLE};
use super::{init_linear, linear, EncodeError, EncoderConfig, FeatureTables, Result};
use crate::smiles::MolecularGraph;

#[derive(Debug, Clone, PartialEq)]
pub struct GcnBatch {
    pub graphs: usize,
    pub atom_rows: Vec<usize>,
    pub atom_graph: Vec<usize>,
    /// Atoms of each graph.
    pub members: Vec<Vec<usize>>,
    /// Aggregation pairs `src -> dst`, including one self loop per atom.
    pub agg_src: Vec<usize>,
    pub agg_dst: Vec<usize>,
    /// `1 / (degree + 1)` per atom.
    pub inv_deg: Vec<f64>,
}

impl GcnBatch {
    pub fn new(graphs: &[&MolecularGraph], tables: &FeatureTables) -> Result<Self> {
        if graphs.is_empty() {
            return Err(EncodeError::EmptyBatch);
        }
        let mut b = GcnBatch {
            graphs: graphs.len(),
            atom_rows: vec![],
            atom_graph: vec![],
            members: vec![],
            agg_src: vec![],
            agg_dst: vec![],
            inv_deg: vec![],
        };
        for (gi, g) in graphs.iter().enumerate() {
            if g.atoms.is_empty() {
                return Err(EncodeError::EmptySet);
            }
            let off = b.atom_rows.len();
            for (i, a) in g.atoms.iter().enumerate() {
                b.atom_rows.push(tables.atom_row(a)?);
                b.atom_graph.push(gi);
                b.agg_src.push(off + i);
                b.agg_dst.push(off + i);
                b.inv_deg.push(1.0 / (g.degree(i) + 1) as f64);
            }
            for bond in &g.bonds {
                b.agg_src.extend([off + bond.begin, off + bond.end]);
                b.agg_dst.extend([off + bond.end, off + bond.begin]);
            }
            b.members.push((off..off + g.atom_count()).collect());
        }
        Ok(b)
    }
}

pub struct GcnOutput<'t> {
    /// `[graphs, 2 * hidden]`
    pub embedding: Var<'t>,
    pub node_hidden: Var<'t>,
    /// Readout gate per atom, `[atoms, 1]`.
    pub gate: Var<'t>,
}

pub fn init_gcn(params: &mut ParameterSet, cfg: &EncoderConfig, rng: &mut impl Rng) -> Result<()> {
    let mut fan_in = ATOM_DIM;
    for l in 0..cfg.gcn_layers.max(1) {
        init_linear(params, &format!("gcn.layer{l}"), fan_in, cfg.gcn_hidden, rng)?;
        fan_in = cfg.gcn_hidden;
    }
    init_linear(params, "gcn.gate", cfg.gcn_hidden, 1, rng)
}

pub fn gcn_encode<'t>(
    tape: &'t Tape,
    params: &ParameterSet,
    batch: &GcnBatch,
    cfg: &EncoderConfig,
) -> Result<GcnOutput<'t>> {
    let n = batch.atom_rows.len();
    let mut h = tape.param(params, ATOM_TABLE)?.gather_rows(&batch.atom_rows)?;
    let inv = tape.constant(Tensor::column(&batch.inv_deg))?;
    for l in 0..cfg.gcn_layers.max(1) {
        let agg = h
            .gather_rows(&batch.agg_src)?
            .scatter_add_rows(&batch.agg_dst, n)?
            .scale_rows(inv)?;
        h = linear(tape, params, &format!("gcn.layer{l}"), agg)?.relu()?;
    }
    let gate = linear(tape, params, "gcn.gate", h)?.sigmoid()?;
    let weighted = h.scale_rows(gate)?.scatter_add_rows(&batch.atom_graph, batch.graphs)?;
    let maxes = batch
        .members
        .iter()
        .map(|m| h.gather_rows(m)?.max_axis(Axis::Rows))
        .collect::<numcore::Result<Vec<_>>>()?;
    let max_pool = tape.concat_rows(&maxes)?;
    Ok(GcnOutput {
        embedding: tape.concat_cols(&[weighted, max_pool])?,
        node_hidden: h,
        gate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::fixture::build;
    use crate::smiles::parse_smiles;
    use numcore::tape::sigmoid;

    fn small() -> EncoderConfig {
        EncoderConfig { kmpnn_hidden: 8, gcn_hidden: 8, ..Default::default() }
    }

    fn encode(f: &crate::encoders::fixture::Fixture, mol: &MolecularGraph) -> (Tensor, Tensor, Tensor) {
        let b = GcnBatch::new(&[mol], &f.tables).unwrap();
        let tape = Tape::new();
        let out = gcn_encode(&tape, &f.params, &b, &f.cfg).unwrap();
        (out.embedding.value(), out.node_hidden.value(), out.gate.value())
    }

    #[test]
    fn single_node_readout() {
        let f = build(small(), 0);
        let (emb, h, gate) = encode(&f, &parse_smiles("N").unwrap());
        let w = gate.item();
        for j in 0..8 {
            assert!((emb.get(0, j) - w * h.get(0, j)).abs() < 1e-15);
            assert_eq!(emb.get(0, 8 + j), h.get(0, j));
        }
    }

    #[test]
    fn two_node_path_hand_unrolled() {
        let f = build(small(), 1);
        let mol = parse_smiles("CO").unwrap();
        let (emb, _, _) = encode(&f, &mol);
        let p = |n: &str| f.params.value(n).unwrap().clone();
        let lin = |x: &[f64], l: usize| -> Vec<f64> {
            let w = p(&format!("gcn.layer{l}.w"));
            let b = p(&format!("gcn.layer{l}.b"));
            (0..w.cols())
                .map(|j| (b.data()[j] + (0..x.len()).map(|i| x[i] * w.get(i, j)).sum::<f64>()).max(0.0))
                .collect()
        };
        let table = p(ATOM_TABLE);
        let mut h: Vec<Vec<f64>> = mol.atoms.iter().map(|a| table.row_slice(f.tables.atom_row(a).unwrap()).to_vec()).collect();
        for l in 0..2 {
            // both atoms see themselves and each other: mean of the two
            let mean: Vec<f64> = h[0].iter().zip(&h[1]).map(|(a, b)| (a + b) / 2.0).collect();
            h = vec![lin(&mean, l), lin(&mean, l)];
        }
        let gw = p("gcn.gate.w");
        let gb = p("gcn.gate.b").item();
        let mut expect = [0.0; 16];
        for hv in &h {
            let g = sigmoid(gb + (0..8).map(|i| hv[i] * gw.get(i, 0)).sum::<f64>());
            for j in 0..8 {
                expect[j] += g * hv[j];
                expect[8 + j] = if expect[8 + j] == 0.0 { hv[j] } else { expect[8 + j].max(hv[j]) };
            }
        }
        for j in 0..16 {
            assert!((emb.get(0, j) - expect[j]).abs() < 1e-12, "{j}");
        }
    }

    #[test]
    fn empty_inputs() {
        let f = build(small(), 2);
        assert!(matches!(GcnBatch::new(&[], &f.tables), Err(EncodeError::EmptyBatch)));
        let s = parse_smiles("S").unwrap();
        assert!(matches!(GcnBatch::new(&[&s], &f.tables), Err(EncodeError::UncoveredNodeType(_))));
    }
}
