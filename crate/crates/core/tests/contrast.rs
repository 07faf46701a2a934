mod common;

use chemcl::contrast::*;
use chemcl::pipeline::data::bundled_molecules;
use numcore::gradcheck::{check_inputs, FD_STEP};
use numcore::{Tape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bundled_fps() -> Vec<Fingerprint> {
    bundled_molecules()
        .iter()
        .map(|m| morgan_fingerprint(m, DEFAULT_RADIUS, DEFAULT_NBITS).unwrap())
        .collect()
}

#[test]
fn fingerprints_ignore_atom_order() {
    for (i, m) in bundled_molecules().iter().enumerate() {
        let a = morgan_fingerprint(m, 2, 2048).unwrap();
        for s in 0..3 {
            let b = morgan_fingerprint(&common::permuted(m, (i * 3 + s) as u64), 2, 2048).unwrap();
            assert_eq!(a, b, "{}", m.source_text);
        }
    }
}

#[test]
fn hard_batches_beat_random_batches() {
    let fps = bundled_fps();
    for seed in 0..20 {
        let hard = build_hard_batches(&fps, 16, seed).unwrap();
        let random = build_random_batches(fps.len(), 16, seed).unwrap();
        let h = mean_intra_batch_tanimoto(&fps, &hard).unwrap();
        let r = mean_intra_batch_tanimoto(&fps, &random).unwrap();
        assert!(h >= r, "seed {seed}: {h} < {r}");
    }
}

#[test]
fn cache_file_round_trip() {
    let fps = bundled_fps();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fps.tsv");
    std::fs::write(&path, fingerprints_to_cache(&fps)).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), fps.len());
    assert_eq!(fingerprints_from_cache(&text, DEFAULT_NBITS, DEFAULT_RADIUS).unwrap(), fps);
}

#[test]
fn nt_xent_gradient_matches_finite_differences() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // a single pair has a constant loss (ln 2), so its gradient is zero
        // and only rounding noise would be compared
        let n = rng.gen_range(2..6);
        let d = rng.gen_range(2..6);
        let tau = rng.gen_range(0.1..1.0);
        let z = Tensor::uniform(n, d, 1.0, &mut rng);
        let za = Tensor::uniform(n, d, 1.0, &mut rng);
        let r = check_inputs(&[z, za], FD_STEP, |_, v| {
            nt_xent(v[0], v[1], tau).map_err(|e| match e {
                ContrastError::Num(n) => n,
                other => panic!("{other}"),
            })
        })
        .unwrap();
        assert!(r.relative_error() < 1e-4, "seed {seed}: {}", r.relative_error());
    }
}

#[test]
fn nt_xent_symmetric_under_pair_permutation() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (n, d) = (5, 4);
    let z = Tensor::uniform(n, d, 1.0, &mut rng);
    let za = Tensor::uniform(n, d, 1.0, &mut rng);
    let perm = common::permutation(n, 9);
    let reorder = |t: &Tensor| {
        let mut out = Tensor::zeros(n, d);
        for i in 0..n {
            out.row_slice_mut(perm[i]).copy_from_slice(t.row_slice(i));
        }
        out
    };
    let loss = |a: Tensor, b: Tensor| {
        let tape = Tape::new();
        nt_xent(tape.constant(a).unwrap(), tape.constant(b).unwrap(), 0.1).unwrap().item()
    };
    let base = loss(z.clone(), za.clone());
    assert!((base - loss(reorder(&z), reorder(&za))).abs() < 1e-12);
}

proptest! {
    #[test]
    fn batches_partition_the_corpus(n in 2usize..40, size in 1usize..10, seed in any::<u64>(), bits in prop::collection::vec(0usize..64, 1..8)) {
        prop_assume!(size <= n);
        let fps: Vec<Fingerprint> = (0..n)
            .map(|i| Fingerprint::from_bits(64, 0, &bits.iter().map(|b| (b * (i + 1)) % 64).collect::<Vec<_>>()))
            .collect();
        let batches = build_hard_batches(&fps, size, seed).unwrap();
        let mut seen = vec![0; n];
        for b in &batches {
            prop_assert!(b.members.len() <= size);
            for &m in &b.members { seen[m] += 1; }
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        prop_assert_eq!(batches, build_hard_batches(&fps, size, seed).unwrap());
    }

    #[test]
    fn tanimoto_is_symmetric_and_bounded(a in prop::collection::vec(0usize..128, 0..20), b in prop::collection::vec(0usize..128, 0..20)) {
        let fa = Fingerprint::from_bits(128, 0, &a);
        let fb = Fingerprint::from_bits(128, 0, &b);
        let s = tanimoto(&fa, &fb).unwrap();
        prop_assert_eq!(s, tanimoto(&fb, &fa).unwrap());
        prop_assert!((0.0..=1.0).contains(&s));
        if fa.popcount() > 0 {
            prop_assert_eq!(tanimoto(&fa, &fa).unwrap(), 1.0);
        }
    }
}
