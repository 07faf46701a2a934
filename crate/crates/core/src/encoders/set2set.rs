//! Set2set readout: an LSTM query attends over each set of node vectors for
//! a fixed number of steps; the output is `[query || attended read]`.

use numcore::{Axis, ParameterSet, Tape, Tensor, Var};
use rand::Rng;

use super::{EncodeError, Result};

const GATES: [&str; 4] = ["i", "f", "g", "o"];

/// LSTM weights for input width `2 * dim` and state width `dim`.
pub fn init_set2set(params: &mut ParameterSet, prefix: &str, dim: usize, rng: &mut impl Rng) -> Result<()> {
    for g in GATES {
        params.insert(format!("{prefix}.w{g}"), Tensor::glorot(2 * dim, dim, rng))?;
        params.insert(format!("{prefix}.u{g}"), Tensor::glorot(dim, dim, rng))?;
        params.insert(format!("{prefix}.b{g}"), Tensor::zeros(1, dim))?;
    }
    Ok(())
}

pub struct Set2setOutput<'t> {
    /// `[sets, 2 * dim]`
    pub embedding: Var<'t>,
    /// Attention column `[nodes, 1]` per processing step.
    pub attention: Vec<Var<'t>>,
}

/// Reads out `sets` sets from the rows of `h` (`[nodes, dim]`); `set_of[i]`
/// names the set of row `i`. Every set must be non-empty.
pub fn set2set<'t>(
    tape: &'t Tape,
    params: &ParameterSet,
    prefix: &str,
    h: Var<'t>,
    set_of: &[usize],
    sets: usize,
    steps: usize,
) -> Result<Set2setOutput<'t>> {
    let dim = h.shape().cols;
    let mut sizes = vec![0usize; sets];
    for &s in set_of {
        sizes[s] += 1;
    }
    if sets == 0 || sizes.contains(&0) {
        return Err(EncodeError::EmptySet);
    }
    let p = |n: &str| tape.param(params, &format!("{prefix}.{n}"));
    let mut q_star = tape.constant(Tensor::zeros(sets, 2 * dim))?;
    let mut hid = tape.constant(Tensor::zeros(sets, dim))?;
    let mut cell = tape.constant(Tensor::zeros(sets, dim))?;
    let mut attention = Vec::with_capacity(steps);
    for _ in 0..steps {
        let gate = |g: &str| -> Result<Var<'t>> {
            Ok(q_star
                .matmul(p(&format!("w{g}"))?)?
                .add(hid.matmul(p(&format!("u{g}"))?)?)?
                .add_row(p(&format!("b{g}"))?)?)
        };
        let i = gate("i")?.sigmoid()?;
        let f = gate("f")?.sigmoid()?;
        let g = gate("g")?.tanh()?;
        let o = gate("o")?.sigmoid()?;
        cell = f.mul(cell)?.add(i.mul(g)?)?;
        hid = o.mul(cell.tanh()?)?;
        let q = hid;
        let e = h.mul(q.gather_rows(set_of)?)?.sum_axis(Axis::Cols)?;
        let a = e.segment_softmax(set_of)?;
        let r = h.scale_rows(a)?.scatter_add_rows(set_of, sets)?;
        q_star = tape.concat_cols(&[q, r])?;
        attention.push(a);
    }
    Ok(Set2setOutput {
        embedding: q_star,
        attention,
    })
}
