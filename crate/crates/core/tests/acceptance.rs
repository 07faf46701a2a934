//! Acceptance run: one PASS/FAIL line per criterion, exit status 1 when any
//! criterion fails. Tolerances and budgets are pinned below.

mod common;

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::Instant;

use chemcl::augment::{augment, UnknownElementPolicy};
use chemcl::contrast::{morgan_fingerprint, nt_xent, tanimoto, Fingerprint, DEFAULT_NBITS, DEFAULT_RADIUS};
use chemcl::elementkg::{bundled_kg, kg_stats, ElementKG, Triple};
use chemcl::encoders::{init_set2set, set2set};
use chemcl::kgembed::{random_embedding, rank_eval, rotate_score, train_rotate, KgEmbedding, RotateConfig};
use chemcl::pipeline::ablation::{AblationOptions, AblationTable};
use chemcl::pipeline::data::{halogen_corpus, heteroatom_corpus, synthetic_molecules};
use chemcl::pipeline::model::{augment_all, EncoderInputs};
use chemcl::pipeline::*;
use chemcl::MolecularGraph;
use numcore::gradcheck::op_cases;
use numcore::{Checkpoint, ParameterSet, Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const KG_TRIPLES_REFERENCE: f64 = 1643.0;
const KG_TOLERANCE: f64 = 0.10;
const KG_BUDGET_S: f64 = 1.0;

const ROTATE_EPOCHS: usize = 300;
const ROTATE_SEEDS: u64 = 5;
const ROTATE_MRR_FACTOR: f64 = 2.0;
const ROTATE_BUDGET_S: f64 = 30.0;

const GRAD_TOLERANCE: f64 = 1e-4;
const GRAD_INSTANCES: usize = 20;
const GRAD_BUDGET_S: f64 = 60.0;

const AUGMENT_MOLECULES: usize = 50;

const LN2_TOLERANCE: f64 = 1e-9;

const PRETRAIN_MOLECULES: usize = 100;
const PRETRAIN_REDUCTION: f64 = 0.20;
const PRETRAIN_BUDGET_S: f64 = 300.0;

const DOWNSTREAM_SEEDS: u64 = 3;
const DOWNSTREAM_MARGIN: f64 = 0.05;
const DOWNSTREAM_BUDGET_S: f64 = 600.0;

const ATTENTION_TOLERANCE: f64 = 1e-6;

const PERMUTATIONS: u64 = 10;
const PERMUTED_MOLECULES: usize = 20;
const PERMUTATION_TOLERANCE: f64 = 1e-9;

type Criterion<'a> = Box<dyn Fn() -> Outcome + 'a>;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

/// Shared across criteria: the bundled graph and its rotation embedding.
struct Context {
    kg: ElementKG,
    emb: KgEmbedding,
    molecules: Vec<MolecularGraph>,
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let kg = bundled_kg().unwrap();
    let s = kg_stats(&kg);
    let secs = t.elapsed().as_secs_f64();
    let rel = (s.triples as f64 - KG_TRIPLES_REFERENCE).abs() / KG_TRIPLES_REFERENCE;
    let pass = rel <= KG_TOLERANCE && s.entities == s.elements + s.attributes && secs < KG_BUDGET_S;
    outcome(
        pass,
        format!(
            "triples {} vs {KG_TRIPLES_REFERENCE} ({:+.1}%, tol {:.0}%), entities {} = {} elements + {} attributes, {} relations, {secs:.3}s < {KG_BUDGET_S}s",
            s.triples,
            100.0 * (s.triples as f64 / KG_TRIPLES_REFERENCE - 1.0),
            100.0 * KG_TOLERANCE,
            s.entities,
            s.elements,
            s.attributes,
            s.relation_types
        ),
    )
}

/// Mean distance over every head or tail corruption that is not a triple.
fn mean_corrupted_score(emb: &KgEmbedding, kg: &ElementKG) -> f64 {
    let known: std::collections::BTreeSet<(String, String, String)> =
        kg.triples().iter().map(|t| (t.head.clone(), t.relation.clone(), t.tail.clone())).collect();
    let attrs: Vec<&str> = kg.attributes().collect();
    let els: Vec<&str> = kg.elements().collect();
    let (mut sum, mut n) = (0.0, 0usize);
    for t in kg.triples() {
        let heads = attrs.iter().map(|h| Triple::new(*h, t.relation.as_str(), t.tail.as_str()));
        let tails = els.iter().map(|e| Triple::new(t.head.as_str(), t.relation.as_str(), *e));
        for c in heads.chain(tails) {
            if !known.contains(&(c.head.clone(), c.relation.clone(), c.tail.clone())) {
                sum += rotate_score(emb, &c).unwrap();
                n += 1;
            }
        }
    }
    sum / n as f64
}

fn criterion_2() -> Outcome {
    let t = Instant::now();
    let kg = common::toy_kg();
    let random = (0..ROTATE_SEEDS)
        .map(|s| rank_eval(&random_embedding(&kg, 128, s).unwrap(), &kg).unwrap().mrr)
        .sum::<f64>()
        / ROTATE_SEEDS as f64;
    let (mut mrr, mut separated) = (0.0, 0);
    for seed in 0..ROTATE_SEEDS {
        let (emb, _) = train_rotate(&kg, &RotateConfig { epochs: ROTATE_EPOCHS, seed, ..Default::default() }).unwrap();
        mrr += rank_eval(&emb, &kg).unwrap().mrr;
        let true_mean =
            kg.triples().iter().map(|t| rotate_score(&emb, t).unwrap()).sum::<f64>() / kg.triples().len() as f64;
        if true_mean < mean_corrupted_score(&emb, &kg) {
            separated += 1;
        }
    }
    mrr /= ROTATE_SEEDS as f64;
    let secs = t.elapsed().as_secs_f64();
    let entities = kg.entities().count();
    outcome(
        entities == 10 && separated == ROTATE_SEEDS && mrr >= ROTATE_MRR_FACTOR * random && secs < ROTATE_BUDGET_S,
        format!(
            "{entities} entities, {ROTATE_EPOCHS} epochs, true < corrupted mean score on {separated}/{ROTATE_SEEDS} seeds, MRR {mrr:.3} vs {ROTATE_MRR_FACTOR} x random {random:.3}, {secs:.1}s < {ROTATE_BUDGET_S}s"
        ),
    )
}

fn criterion_3() -> Outcome {
    let t = Instant::now();
    let (mut worst, mut worst_name, mut checks) = (0.0f64, String::new(), 0);
    for case in op_cases() {
        for seed in 0..GRAD_INSTANCES as u64 {
            let e = (case.run)(seed).unwrap().relative_error();
            checks += 1;
            if e > worst {
                worst = e;
                worst_name = case.name.to_string();
            }
        }
    }
    let composed = common::grad::composed_check(GRAD_INSTANCES);
    let composed_worst = composed.errors.iter().copied().fold(0.0, f64::max);
    let secs = t.elapsed().as_secs_f64();
    outcome(
        worst < GRAD_TOLERANCE && composed_worst < GRAD_TOLERANCE && secs < GRAD_BUDGET_S,
        format!(
            "{} ops x {GRAD_INSTANCES} = {checks} checks, worst {worst:.2e} ({worst_name}); composed path {} instances ({} redrawn at zero projections), worst {composed_worst:.2e}; tol {GRAD_TOLERANCE:.0e}, {secs:.1}s < {GRAD_BUDGET_S}s",
            op_cases().len(),
            composed.errors.len(),
            composed.redrawn
        ),
    )
}

fn criterion_4(ctx: &Context) -> Outcome {
    let mut bad = Vec::new();
    for m in ctx.molecules.iter().take(AUGMENT_MOLECULES) {
        let g = augment(m, &ctx.kg, UnknownElementPolicy::Error).unwrap();
        let mut attrs = std::collections::BTreeSet::new();
        let mut rel_edges = 0;
        for a in &m.atoms {
            for t in ctx.kg.neighbors_of_element(a.element.symbol()).unwrap() {
                attrs.insert(t.head.clone());
                rel_edges += 1;
            }
        }
        let ok = g.nodes.len() == m.atom_count() + attrs.len()
            && g.edges.len() == m.bond_count() + rel_edges
            && g.relation_edges().count() == rel_edges
            && &g.strip_attributes() == m;
        if !ok {
            bad.push(m.source_text.clone());
        }
    }
    let n = ctx.molecules.len().min(AUGMENT_MOLECULES);
    outcome(
        bad.is_empty() && n == AUGMENT_MOLECULES,
        format!("{}/{n} molecules match brute-force counts and strip back exactly {bad:?}", n - bad.len()),
    )
}

fn criterion_5() -> Outcome {
    let a = Fingerprint::from_bits(64, 0, &[0, 1, 2]);
    let b = Fingerprint::from_bits(64, 0, &[1, 2, 3, 4]);
    let t = tanimoto(&a, &b).unwrap();
    let mut worst = 0.0f64;
    for tau in [0.1, 0.5, 1.0] {
        let tape = Tape::new();
        let z = tape.constant(Tensor::row(&[0.3, -1.2, 0.5])).unwrap();
        let l = nt_xent(z, z, tau).unwrap().item();
        worst = worst.max((l - std::f64::consts::LN_2).abs());
    }
    outcome(
        t == 0.4 && worst < LN2_TOLERANCE,
        format!("tanimoto = {t} (exact 0.4); single identical pair |loss - ln 2| <= {worst:.1e} for tau in {{0.1, 0.5, 1}} (tol {LN2_TOLERANCE:.0e})"),
    )
}

fn criterion_6(ctx: &Context) -> Outcome {
    let t = Instant::now();
    let corpus = synthetic_molecules(PRETRAIN_MOLECULES, 0);
    let cfg = PretrainConfig { epoch: 10, seed: 0, ..PretrainConfig::default() };
    let a = pretrain(&corpus, &ctx.kg, Some(&ctx.emb), &cfg).unwrap();
    let b = pretrain(&corpus, &ctx.kg, Some(&ctx.emb), &cfg).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let first = a.epoch_losses[0];
    let last = *a.epoch_losses.last().unwrap();
    let reduction = (first - last) / first;
    let meta = BTreeMap::new();
    let same = a.epoch_losses == b.epoch_losses
        && a.model.to_checkpoint(&meta).to_bytes().unwrap() == b.model.to_checkpoint(&meta).to_bytes().unwrap();
    outcome(
        reduction >= PRETRAIN_REDUCTION && same && secs < PRETRAIN_BUDGET_S && a.epoch_losses.len() == 10,
        format!(
            "{PRETRAIN_MOLECULES} molecules, loss {first:.4} -> {last:.4} ({:.1}% reduction, need {:.0}%), repeat run identical: {same}, {secs:.1}s for two runs < {PRETRAIN_BUDGET_S}s",
            100.0 * reduction,
            100.0 * PRETRAIN_REDUCTION
        ),
    )
}

fn criterion_7(ctx: &Context) -> Outcome {
    let t = Instant::now();
    let cfg = PretrainConfig::default();
    let mut rows = Vec::new();
    let mut gains = Vec::new();
    for seed in 0..DOWNSTREAM_SEEDS {
        let pre = pretrain(
            &synthetic_molecules(100, 100 + seed),
            &ctx.kg,
            Some(&ctx.emb),
            &PretrainConfig { seed, ..cfg.clone() },
        )
        .unwrap();
        let corpus = split(
            halogen_corpus("halogen", synthetic_molecules(200, 200 + seed)).unwrap(),
            SplitMode::Random,
            seed,
        )
        .unwrap();
        let ds = DownstreamConfig { seed, ..DownstreamConfig::default() };
        let baseline = Model::init(&corpus.molecules, &ctx.kg, None, &cfg.encoder(), seed).unwrap();
        let mut per_encoder = Vec::new();
        for kind in [EncoderKind::Kmpnn, EncoderKind::Gcn] {
            let p = finetune(&pre.model, &ctx.kg, &corpus, Protocol::Linear, kind, &ds).unwrap().test;
            let r = finetune(&baseline, &ctx.kg, &corpus, Protocol::Linear, kind, &ds).unwrap().test;
            per_encoder.push(format!("{} {p:.3}/{r:.3}", kind.name()));
            if kind == EncoderKind::Kmpnn {
                gains.push(p - r);
            }
        }
        rows.push(format!("seed {seed}: {}", per_encoder.join(" ")));
    }
    let margin = gains.iter().sum::<f64>() / gains.len() as f64;
    let secs = t.elapsed().as_secs_f64();
    outcome(
        margin >= DOWNSTREAM_MARGIN && secs < DOWNSTREAM_BUDGET_S,
        format!(
            "linear-protocol test AUC pretrained/random [{}]; kmpnn mean margin {margin:+.4} (need >= {DOWNSTREAM_MARGIN}), gcn shown for reference, {secs:.1}s < {DOWNSTREAM_BUDGET_S}s",
            rows.join("; ")
        ),
    )
}

fn criterion_8(ctx: &Context) -> Outcome {
    let t = Instant::now();
    let mut base = PipelineConfig::default().with_seed(0);
    base.pretrain.epoch = 2;
    base.downstream.max_epochs = 20;
    base.downstream.patience = 5;
    let datasets = vec![
        split(halogen_corpus("halogen", synthetic_molecules(80, 300)).unwrap(), SplitMode::Random, 0).unwrap(),
        split(heteroatom_corpus("heteroatoms", synthetic_molecules(80, 301)).unwrap(), SplitMode::Random, 0).unwrap(),
    ];
    let opts = AblationOptions { protocol: Protocol::Linear, ..AblationOptions::default() };
    let table = ablation_run(&ctx.molecules, &datasets, &ctx.kg, &ctx.emb, &base, &opts).unwrap();
    let csv = table.to_csv();
    let names: Vec<&str> = table.columns.iter().map(|c| c.name.as_str()).collect();
    let sim = |name: &str| table.batch_similarity[names.iter().position(|n| *n == name).unwrap()].unwrap();
    let (wo_ns, all) = (sim("w/oNS"), sim("ALL"));
    let shaped = names == ["w/oALL", "w/oInit", "w/oNS", "ALL"]
        && csv.contains("\nDataset,w/oALL,w/oInit,w/oNS,ALL\n")
        && csv.contains("\nAve(Cls),")
        && csv.contains("\nAve(Reg),")
        && AblationTable::from_csv(&csv).map(|t| t.to_csv() == csv).unwrap_or(false);
    let secs = t.elapsed().as_secs_f64();
    outcome(
        shaped && wo_ns < all,
        format!(
            "{} bundled molecules, columns {names:?}, CSV shape ok: {shaped}, mean intra-batch Tanimoto w/oNS {wo_ns:.4} < ALL {all:.4}, {secs:.1}s",
            ctx.molecules.len()
        ),
    )
}

fn criterion_9(ctx: &Context) -> Outcome {
    let model = Model::init(&ctx.molecules, &ctx.kg, Some(&ctx.emb), &PretrainConfig::default().encoder(), 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("attention.ckpt");
    model.to_checkpoint(&BTreeMap::new()).write_to(std::fs::File::create(&path).unwrap()).unwrap();
    let dump = || {
        let ck = Checkpoint::read_from(std::fs::File::open(&path).unwrap()).unwrap();
        let m = Model::from_checkpoint(&ck).unwrap();
        let rows = dump_attention(&m, &ctx.molecules, &ctx.kg).unwrap();
        (attention_csv(&rows), rows)
    };
    let (first, rows) = dump();
    let (second, _) = dump();
    let mut sums: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for r in &rows {
        *sums.entry((r.mol_index, r.atom_index)).or_default() += r.weight;
    }
    let worst = sums.values().map(|s| (s - 1.0).abs()).fold(0.0, f64::max);
    let atoms: usize = ctx.molecules.iter().map(|m| m.atom_count()).sum();
    outcome(
        worst < ATTENTION_TOLERANCE && first == second && sums.len() == atoms,
        format!(
            "{} molecules, {}/{atoms} atoms with weights, worst |sum - 1| {worst:.1e} (tol {ATTENTION_TOLERANCE:.0e}), two dumps byte-identical: {} ({} bytes)",
            ctx.molecules.len(),
            sums.len(),
            first == second,
            first.len()
        ),
    )
}

fn criterion_10(ctx: &Context) -> Outcome {
    let mols: Vec<MolecularGraph> = ctx.molecules.iter().take(PERMUTED_MOLECULES).cloned().collect();
    let model = Model::init(&ctx.molecules, &ctx.kg, Some(&ctx.emb), &PretrainConfig::default().encoder(), 10).unwrap();
    let encode = |ms: &[MolecularGraph], kind: EncoderKind| -> Tensor {
        let aug = augment_all(ms, &ctx.kg).unwrap();
        let inputs = EncoderInputs { molecules: ms, augmented: &aug };
        let tape = Tape::new();
        let members: Vec<usize> = (0..ms.len()).collect();
        inputs.encode(&tape, &model.params, &model.tables, &model.encoder, kind, &members).unwrap().value()
    };
    let base_k = encode(&mols, EncoderKind::Kmpnn);
    let base_g = encode(&mols, EncoderKind::Gcn);
    let fps = |ms: &[MolecularGraph]| -> Vec<Fingerprint> {
        ms.iter().map(|m| morgan_fingerprint(m, DEFAULT_RADIUS, DEFAULT_NBITS).unwrap()).collect()
    };
    let base_fp = fps(&mols);

    let mut s2s = ParameterSet::new();
    init_set2set(&mut s2s, "s", 8, &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
    let set_of: Vec<usize> = mols.iter().enumerate().flat_map(|(i, m)| std::iter::repeat_n(i, m.atom_count())).collect();
    let h = Tensor::uniform(set_of.len(), 8, 1.0, &mut ChaCha8Rng::seed_from_u64(11));
    let readout = |h: &Tensor, set_of: &[usize]| {
        let tape = Tape::new();
        let v = tape.constant(h.clone()).unwrap();
        set2set(&tape, &s2s, "s", v, set_of, mols.len(), 3).unwrap().embedding.value()
    };
    let base_s = readout(&h, &set_of);

    let (mut dk, mut dg, mut ds, mut fp_equal) = (0.0f64, 0.0f64, 0.0f64, true);
    for p in 0..PERMUTATIONS {
        let permuted: Vec<MolecularGraph> = mols.iter().enumerate().map(|(i, m)| common::permuted(m, 100 * p + i as u64)).collect();
        dk = dk.max(encode(&permuted, EncoderKind::Kmpnn).max_abs_diff(&base_k));
        dg = dg.max(encode(&permuted, EncoderKind::Gcn).max_abs_diff(&base_g));
        fp_equal &= fps(&permuted) == base_fp;
        let order = common::permutation(set_of.len(), p);
        let data: Vec<f64> = order.iter().flat_map(|&r| h.row_slice(r).to_vec()).collect();
        let hp = Tensor::from_vec(order.len(), 8, data).unwrap();
        let sp: Vec<usize> = order.iter().map(|&r| set_of[r]).collect();
        ds = ds.max(readout(&hp, &sp).max_abs_diff(&base_s));
    }
    let pass = dk < PERMUTATION_TOLERANCE && dg < PERMUTATION_TOLERANCE && ds < PERMUTATION_TOLERANCE && fp_equal;
    outcome(
        pass,
        format!(
            "{PERMUTATIONS} permutations x {PERMUTED_MOLECULES} molecules: max diff kmpnn {dk:.1e}, gcn {dg:.1e}, set2set {ds:.1e} (tol {PERMUTATION_TOLERANCE:.0e}); fingerprints identical: {fp_equal}"
        ),
    )
}

fn main() -> ExitCode {
    let t = Instant::now();
    let kg = bundled_kg().unwrap();
    let (emb, _) = train_rotate(&kg, &KgEmbedConfig::default().rotate()).unwrap();
    println!("setup: bundled knowledge graph embedded in {:.1}s", t.elapsed().as_secs_f64());
    let ctx = Context { kg, emb, molecules: bundled_molecules() };

    let criteria: Vec<(&str, Criterion<'_>)> = vec![
        ("knowledge graph statistics", Box::new(criterion_1)),
        ("rotation embedding on a toy graph", Box::new(criterion_2)),
        ("gradient suite", Box::new(criterion_3)),
        ("augmentation oracle", Box::new(|| criterion_4(&ctx))),
        ("similarity and loss anchors", Box::new(criterion_5)),
        ("contrastive training signal", Box::new(|| criterion_6(&ctx))),
        ("downstream directional check", Box::new(|| criterion_7(&ctx))),
        ("ablation wiring", Box::new(|| criterion_8(&ctx))),
        ("attention dump", Box::new(|| criterion_9(&ctx))),
        ("permutation invariance", Box::new(|| criterion_10(&ctx))),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let o = run();
        failed += usize::from(!o.pass);
        println!(
            "criterion {:>2} {} {name}: {} [{:.1}s]",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} of {} criteria pass", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
