//! Central finite-difference gradient checking.
//!
//! The numerical side only ever evaluates forward passes on fresh tapes, so
//! it does not share any code path with the reverse sweep it is checking.

use crate::error::Result;
use crate::params::ParameterSet;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

impl GradReport {
    /// `‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂, 1e-8)`.
    pub fn relative_error(&self) -> f64 {
        let diff: f64 = self
            .analytic
            .iter()
            .zip(&self.numeric)
            .map(|(a, n)| (a - n) * (a - n))
            .sum::<f64>()
            .sqrt();
        let na = self.analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn = self.numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        diff / na.max(nn).max(1e-8)
    }
}

/// Checks d(loss)/d(inputs) for a loss built by `f` from leaf variables.
pub fn check_inputs<F>(inputs: &[Tensor], step: f64, f: F) -> Result<GradReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars = inputs
        .iter()
        .map(|t| tape.variable(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let loss = f(&tape, &vars)?;
    let grads = tape.backward(loss)?;
    let mut analytic = Vec::new();
    for (v, t) in vars.iter().zip(inputs) {
        match grads.wrt(*v) {
            Some(g) => analytic.extend_from_slice(g.data()),
            None => analytic.extend(std::iter::repeat_n(0.0, t.shape().numel())),
        }
    }

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars = perturbed
            .iter()
            .map(|t| tape.constant(t.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(f(&tape, &vars)?.item())
    };

    let mut numeric = Vec::with_capacity(analytic.len());
    let mut work: Vec<Tensor> = inputs.to_vec();
    for i in 0..inputs.len() {
        for j in 0..inputs[i].shape().numel() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + step;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - step;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            numeric.push((plus - minus) / (2.0 * step));
        }
    }
    Ok(GradReport { analytic, numeric })
}

/// Checks parameter gradients on the listed `(name, flat_index)` entries.
pub fn check_params<F>(
    params: &ParameterSet,
    entries: &[(String, usize)],
    step: f64,
    f: F,
) -> Result<GradReport>
where
    F: for<'t> Fn(&'t Tape, &ParameterSet) -> Result<Var<'t>>,
{
    let mut work = params.clone();
    work.zero_grad();
    let tape = Tape::new();
    let loss = f(&tape, &work)?;
    let grads = tape.backward(loss)?;
    let analytic = entries
        .iter()
        .map(|(name, idx)| grads.param(name).map_or(0.0, |g| g.data()[*idx]))
        .collect();

    let eval = |p: &ParameterSet| -> Result<f64> {
        let tape = Tape::new();
        Ok(f(&tape, p)?.item())
    };
    let mut numeric = Vec::with_capacity(entries.len());
    for (name, idx) in entries {
        let orig = work.value(name)?.data()[*idx];
        work.value_mut(name)?.data_mut()[*idx] = orig + step;
        let plus = eval(&work)?;
        work.value_mut(name)?.data_mut()[*idx] = orig - step;
        let minus = eval(&work)?;
        work.value_mut(name)?.data_mut()[*idx] = orig;
        numeric.push((plus - minus) / (2.0 * step));
    }
    Ok(GradReport { analytic, numeric })
}

/// One randomized gradient check for a single differentiable op.
pub struct OpCase {
    pub name: &'static str,
    pub run: fn(u64) -> Result<GradReport>,
}

pub const FD_STEP: f64 = 1e-5;

fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

/// Random tensor with entries bounded away from zero, so kinked ops
/// (relu, leaky relu, max) are evaluated away from their kinks.
fn rand_t(r: usize, c: usize, g: &mut impl rand::Rng) -> Tensor {
    let data = (0..r * c)
        .map(|_| {
            let mag = g.gen_range(0.1..1.5);
            if g.gen_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    Tensor::from_vec(r, c, data).expect("shape")
}

fn rand_pos(r: usize, c: usize, g: &mut impl rand::Rng) -> Tensor {
    rand_t(r, c, g).map(f64::abs)
}

/// Contracts a tensor-valued output to a scalar with fixed random weights.
fn contract<'t>(tape: &'t Tape, out: Var<'t>, seed: u64) -> Result<Var<'t>> {
    let s = out.shape();
    let w = tape.constant(rand_t(s.rows, s.cols, &mut rng(seed ^ 0x9e37_79b9)))?;
    out.mul(w)?.sum()
}

fn dims(seed: u64) -> (usize, usize, usize) {
    use rand::Rng;
    let mut g = rng(seed.wrapping_mul(31).wrapping_add(7));
    (g.gen_range(1..5), g.gen_range(1..5), g.gen_range(1..5))
}

macro_rules! unary_case {
    ($name:literal, $gen:ident, $method:ident $(, $arg:expr)*) => {
        OpCase {
            name: $name,
            run: |seed| {
                let (r, c, _) = dims(seed);
                let x = $gen(r, c, &mut rng(seed));
                check_inputs(&[x], FD_STEP, |t, v| contract(t, v[0].$method($($arg),*)?, seed))
            },
        }
    };
}

/// Every differentiable op exposed by [`Var`] and [`Tape`].
pub fn op_cases() -> Vec<OpCase> {
    use crate::tensor::Axis;
    vec![
        OpCase {
            name: "matmul",
            run: |seed| {
                let (n, k, m) = dims(seed);
                let mut g = rng(seed);
                let a = rand_t(n, k, &mut g);
                let b = rand_t(k, m, &mut g);
                check_inputs(&[a, b], FD_STEP, |t, v| contract(t, v[0].matmul(v[1])?, seed))
            },
        },
        OpCase {
            name: "add",
            run: |seed| {
                let (r, c, _) = dims(seed);
                let mut g = rng(seed);
                let (a, b) = (rand_t(r, c, &mut g), rand_t(r, c, &mut g));
                check_inputs(&[a, b], FD_STEP, |t, v| contract(t, v[0].add(v[1])?, seed))
            },
        },
        OpCase {
            name: "sub",
            run: |seed| {
                let (r, c, _) = dims(seed);
                let mut g = rng(seed);
                let (a, b) = (rand_t(r, c, &mut g), rand_t(r, c, &mut g));
                check_inputs(&[a, b], FD_STEP, |t, v| contract(t, v[0].sub(v[1])?, seed))
            },
        },
        OpCase {
            name: "hadamard",
            run: |seed| {
                let (r, c, _) = dims(seed);
                let mut g = rng(seed);
                let (a, b) = (rand_t(r, c, &mut g), rand_t(r, c, &mut g));
                check_inputs(&[a, b], FD_STEP, |t, v| contract(t, v[0].mul(v[1])?, seed))
            },
        },
        OpCase {
            name: "add_row",
            run: |seed| {
                let (r, c, _) = dims(seed);
                let mut g = rng(seed);
                let (a, b) = (rand_t(r, c, &mut g), rand_t(1, c, &mut g));
                check_inputs(&[a, b], FD_STEP, |t, v| contract(t, v[0].add_row(v[1])?, seed))
            },
        },
        OpCase {
            name: "scale_rows",
            run: |seed| {
                let (r, c, _) = dims(seed);
                let mut g = rng(seed);
                let (a, w) = (rand_t(r, c, &mut g), rand_t(r, 1, &mut g));
                check_inputs(&[a, w], FD_STEP, |t, v| contract(t, v[0].scale_rows(v[1])?, seed))
            },
        },
        unary_case!("scale", rand_t, scale, 1.7),
        unary_case!("add_scalar", rand_t, add_scalar, -0.3),
        unary_case!("negate", rand_t, neg),
        unary_case!("transpose", rand_t, transpose),
        unary_case!("softmax_cols", rand_t, softmax, Axis::Cols),
        unary_case!("softmax_rows", rand_t, softmax, Axis::Rows),
        unary_case!("leaky_relu", rand_t, leaky_relu, 0.2),
        unary_case!("relu", rand_t, relu),
        unary_case!("sigmoid", rand_t, sigmoid),
        unary_case!("tanh", rand_t, tanh),
        unary_case!("exp", rand_t, exp),
        unary_case!("log", rand_pos, log),
        unary_case!("sqrt", rand_pos, sqrt),
        unary_case!("sin", rand_t, sin),
        unary_case!("cos", rand_t, cos),
        unary_case!("sum", rand_t, sum),
        unary_case!("mean", rand_t, mean),
        unary_case!("sum_axis_rows", rand_t, sum_axis, Axis::Rows),
        unary_case!("sum_axis_cols", rand_t, sum_axis, Axis::Cols),
        unary_case!("max_axis_rows", rand_t, max_axis, Axis::Rows),
        unary_case!("max_axis_cols", rand_t, max_axis, Axis::Cols),
        unary_case!("normalize_rows", rand_t, normalize_rows),
        OpCase {
            name: "concat_cols",
            run: |seed| {
                let (r, c, d) = dims(seed);
                let mut g = rng(seed);
                let (a, b) = (rand_t(r, c, &mut g), rand_t(r, d, &mut g));
                check_inputs(&[a, b], FD_STEP, |t, v| contract(t, t.concat_cols(v)?, seed))
            },
        },
        OpCase {
            name: "concat_rows",
            run: |seed| {
                let (r, c, d) = dims(seed);
                let mut g = rng(seed);
                let (a, b) = (rand_t(r, c, &mut g), rand_t(d, c, &mut g));
                check_inputs(&[a, b], FD_STEP, |t, v| contract(t, t.concat_rows(v)?, seed))
            },
        },
        OpCase {
            name: "segment_softmax",
            run: |seed| {
                use rand::Rng;
                let mut g = rng(seed);
                let n = g.gen_range(2..8);
                let segs: Vec<usize> = (0..n).map(|_| g.gen_range(0..3)).collect();
                let x = rand_t(n, 1, &mut g);
                check_inputs(&[x], FD_STEP, move |t, v| {
                    contract(t, v[0].segment_softmax(&segs)?, seed)
                })
            },
        },
        OpCase {
            name: "gather_rows",
            run: |seed| {
                use rand::Rng;
                let (r, c, _) = dims(seed);
                let mut g = rng(seed);
                let idx: Vec<usize> = (0..r + 2).map(|_| g.gen_range(0..r)).collect();
                let x = rand_t(r, c, &mut g);
                check_inputs(&[x], FD_STEP, move |t, v| contract(t, v[0].gather_rows(&idx)?, seed))
            },
        },
        OpCase {
            name: "scatter_add_rows",
            run: |seed| {
                use rand::Rng;
                let (r, c, out) = dims(seed);
                let mut g = rng(seed);
                let idx: Vec<usize> = (0..r).map(|_| g.gen_range(0..out)).collect();
                let x = rand_t(r, c, &mut g);
                check_inputs(&[x], FD_STEP, move |t, v| {
                    contract(t, v[0].scatter_add_rows(&idx, out)?, seed)
                })
            },
        },
        OpCase {
            name: "cosine_similarity",
            run: |seed| {
                let (n, d, m) = dims(seed);
                let mut g = rng(seed);
                let (a, b) = (rand_t(n, d + 1, &mut g), rand_t(m, d + 1, &mut g));
                check_inputs(&[a, b], FD_STEP, |t, v| {
                    contract(t, v[0].cosine_similarity(v[1])?, seed)
                })
            },
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_uses_the_larger_norm() {
        let r = GradReport { analytic: vec![3.0, 4.0], numeric: vec![3.0, 4.0 + 1e-3] };
        assert!((r.relative_error() - 1e-3 / 25.008001f64.sqrt()).abs() < 1e-12);
        let tiny = GradReport { analytic: vec![0.0], numeric: vec![1e-10] };
        assert!((tiny.relative_error() - 1e-2).abs() < 1e-12);
    }

    #[test]
    fn square_passes_check() {
        let x = Tensor::row(&[0.3, -1.2, 2.0]);
        let r = check_inputs(&[x], FD_STEP, |_, v| v[0].mul(v[0])?.sum()).unwrap();
        assert!(r.relative_error() < 1e-8);
        assert!((r.analytic[1] + 2.4).abs() < 1e-12);
    }
}
