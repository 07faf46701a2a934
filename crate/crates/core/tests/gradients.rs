mod common;

use chemcl::contrast::ProjectionHead;
use chemcl::pipeline::model::{augment_all, EncoderInputs};
use chemcl::pipeline::{EncoderKind, Model};
use common::grad::{entries, molecules, to_num};
use numcore::gradcheck::{check_inputs, check_params, op_cases, FD_STEP};
use numcore::{ParameterSet, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOLERANCE: f64 = 1e-4;

#[test]
fn every_op_matches_finite_differences_over_twenty_seeds() {
    for case in op_cases() {
        for seed in 0..20 {
            let r = (case.run)(seed).unwrap();
            assert!(r.relative_error() < TOLERANCE, "{} seed {seed}: {}", case.name, r.relative_error());
        }
    }
}

/// Twenty random instances of the encoders, projection head and NT-Xent
/// checked end to end against finite differences.
#[test]
fn composed_contrastive_loss_matches_finite_differences() {
    let r = common::grad::composed_check(20);
    for (i, e) in r.errors.iter().enumerate() {
        assert!(*e < TOLERANCE, "instance {i}: {e} ({} redrawn)", r.redrawn);
    }
}

fn encoder_sum<'t>(
    tape: &'t Tape,
    p: &ParameterSet,
    model: &Model,
    inputs: EncoderInputs<'_>,
    kind: EncoderKind,
    weights: &Tensor,
) -> numcore::Result<Var<'t>> {
    let members: Vec<usize> = (0..inputs.molecules.len()).collect();
    let h = inputs.encode(tape, p, &model.tables, &model.encoder, kind, &members).map_err(to_num)?;
    h.mul(tape.constant(weights.clone())?)?.sum()
}

#[test]
fn each_encoder_alone_matches_finite_differences() {
    let kg = common::toy_kg();
    let mols = molecules();
    let augmented = augment_all(&mols, &kg).unwrap();
    let inputs = EncoderInputs { molecules: &mols, augmented: &augmented };
    let cfg = common::small_encoder();
    for kind in [EncoderKind::Gcn, EncoderKind::Kmpnn] {
        for seed in 0..5u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let model = Model::init(&mols, &kg, None, &cfg, seed).unwrap();
            let weights = Tensor::uniform(mols.len(), cfg.embedding_dim(), 1.0, &mut rng);
            let rows: Vec<usize> = mols.iter().flat_map(|m| m.atoms.iter().map(|a| model.tables.atom_row(a).unwrap())).collect();
            let picks: Vec<_> = entries(&model.params, &rows, &mut rng)
                .into_iter()
                .filter(|(n, _)| kind == EncoderKind::Gcn || !n.starts_with("gcn."))
                .collect();
            let r = check_params(&model.params, &picks, FD_STEP, |tape, p| {
                encoder_sum(tape, p, &model, inputs, kind, &weights)
            })
            .unwrap();
            assert!(r.relative_error() < TOLERANCE, "{} seed {seed}: {}", kind.name(), r.relative_error());
        }
    }
}

#[test]
fn nt_xent_inputs_through_projection_head() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let head = ProjectionHead::new(4, 6, 3);
        let mut params = ParameterSet::new();
        head.init(&mut params, &mut rng).unwrap();
        let n = rng.gen_range(2..6);
        let h = Tensor::uniform(n, 4, 1.0, &mut rng);
        let ha = Tensor::uniform(n, 4, 1.0, &mut rng);
        let r = check_inputs(&[h, ha], FD_STEP, |tape, v| {
            let z = head.project(tape, &params, v[0]).map_err(to_num)?;
            let za = head.project(tape, &params, v[1]).map_err(to_num)?;
            chemcl::contrast::nt_xent(z, za, 0.2).map_err(to_num)
        })
        .unwrap();
        assert!(r.relative_error() < TOLERANCE, "seed {seed}: {}", r.relative_error());
    }
}
