//! End-to-end finite-difference check of encoders, projection head and
//! NT-Xent, shared by the gradient tests and the acceptance run.

use chemcl::contrast::ProjectionHead;
use chemcl::encoders::tables::{ATOM_DIM, ATOM_TABLE};
use chemcl::pipeline::model::{augment_all, EncoderInputs};
use chemcl::pipeline::pretrain::contrastive_loss;
use chemcl::pipeline::{EncoderKind, Model};
use chemcl::smiles::parse_smiles;
use chemcl::MolecularGraph;
use numcore::gradcheck::{check_params, FD_STEP};
use numcore::{NumError, ParameterSet, Tape};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SMILES: [&str; 6] = ["CCO", "c1ccccc1F", "CN", "OC(=O)CN", "FC(F)C", "C1CC1O"];

pub fn molecules() -> Vec<MolecularGraph> {
    SMILES.iter().map(|s| parse_smiles(s).unwrap()).collect()
}

pub fn to_num<E: std::fmt::Display>(e: E) -> NumError {
    panic!("{e}")
}

/// A few entries of every trainable parameter; table entries are drawn
/// from rows the batch actually reads.
pub fn entries(params: &ParameterSet, atom_rows: &[usize], rng: &mut ChaCha8Rng) -> Vec<(String, usize)> {
    let mut out = Vec::new();
    for (name, p) in params.iter() {
        if !p.trainable {
            continue;
        }
        for _ in 0..2 {
            let idx = if name == ATOM_TABLE {
                atom_rows[rng.gen_range(0..atom_rows.len())] * ATOM_DIM + rng.gen_range(0..ATOM_DIM)
            } else {
                rng.gen_range(0..p.value.data().len())
            };
            out.push((name.to_string(), idx));
        }
    }
    out
}

/// Smallest row norm of either projected view. Cosine similarity is not
/// differentiable at a zero row, which a head whose hidden units are all
/// inactive produces exactly.
fn min_projection_norm(model: &Model, head: &ProjectionHead, inputs: EncoderInputs<'_>, members: &[usize]) -> f64 {
    let tape = Tape::new();
    [EncoderKind::Gcn, EncoderKind::Kmpnn]
        .into_iter()
        .flat_map(|kind| {
            let h = inputs.encode(&tape, &model.params, &model.tables, &model.encoder, kind, members).unwrap();
            let z = head.project(&tape, &model.params, h).unwrap().value();
            (0..z.rows())
                .map(|i| z.row_slice(i).iter().map(|x| x * x).sum::<f64>().sqrt())
                .collect::<Vec<_>>()
        })
        .fold(f64::INFINITY, f64::min)
}

pub struct ComposedReport {
    /// Relative error per checked instance.
    pub errors: Vec<f64>,
    /// Instances redrawn because a projection was a zero row.
    pub redrawn: usize,
}

/// Random instances of encoders, projection head and NT-Xent with random
/// trainable tables, checked against central differences until `instances`
/// have been checked.
pub fn composed_check(instances: usize) -> ComposedReport {
    let kg = super::toy_kg();
    let mols = molecules();
    let augmented = augment_all(&mols, &kg).unwrap();
    let inputs = EncoderInputs { molecules: &mols, augmented: &augmented };
    let cfg = super::small_encoder();
    let mut report = ComposedReport { errors: Vec::new(), redrawn: 0 };
    let mut seed = 0u64;
    while report.errors.len() < instances {
        assert!(report.redrawn <= instances, "too many degenerate instances");
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let mut model = Model::init(&mols, &kg, None, &cfg, seed).unwrap();
        seed += 1;
        let head = ProjectionHead::new(cfg.embedding_dim(), 5, 4);
        head.init(&mut model.params, &mut rng).unwrap();
        let size = rng.gen_range(2..=mols.len());
        let mut members: Vec<usize> = (0..mols.len()).collect();
        members.shuffle(&mut rng);
        members.truncate(size);
        let tau = rng.gen_range(0.1..1.0);
        if min_projection_norm(&model, &head, inputs, &members) < 1e-3 {
            report.redrawn += 1;
            continue;
        }
        let rows: Vec<usize> = members
            .iter()
            .flat_map(|&m| mols[m].atoms.iter().map(|a| model.tables.atom_row(a).unwrap()))
            .collect();
        let picks = entries(&model.params, &rows, &mut rng);
        let (tables, members) = (&model.tables, &members);
        let r = check_params(&model.params, &picks, FD_STEP, |tape, p| {
            contrastive_loss(tape, p, tables, &cfg, &head, tau, inputs, members).map_err(to_num)
        })
        .unwrap();
        report.errors.push(r.relative_error());
    }
    report
}
