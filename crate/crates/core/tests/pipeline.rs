use std::collections::{BTreeMap, BTreeSet};

use chemcl::elementkg::bundled_kg;
use chemcl::kgembed::random_embedding;
use chemcl::encoders::tables::ATTR_DIM;
use chemcl::pipeline::ablation::{AblationOptions, AblationTable};
use chemcl::pipeline::data::{halogen_corpus, heteroatom_corpus, synthetic_molecules};
use chemcl::pipeline::metrics::{metrics_from_csv, metrics_to_csv};
use chemcl::pipeline::*;
use numcore::Checkpoint;

fn small_pretrain(seed: u64) -> PretrainConfig {
    PretrainConfig {
        epoch: 2,
        batch_size: 8,
        gcn_node_hidden: 8,
        kmpnn_node_hidden: 8,
        node_out: 8,
        kmpnn_step: 2,
        set2set_step: 2,
        projection_hidden: 16,
        projection_dim: 8,
        seed,
        ..PretrainConfig::default()
    }
}

fn small_pipeline(seed: u64) -> PipelineConfig {
    let mut c = PipelineConfig::default().with_seed(seed);
    c.pretrain = small_pretrain(seed);
    c.downstream.max_epochs = 15;
    c.downstream.patience = 5;
    c
}

#[test]
fn scaffold_split_keeps_scaffolds_apart() {
    let mols = bundled_molecules();
    let corpus = split(halogen_corpus("b", mols).unwrap(), SplitMode::Scaffold, 0).unwrap();
    let keys = |s: Split| -> BTreeSet<String> {
        corpus.indices(s).iter().map(|&i| scaffold_key(&corpus.molecules[i])).collect()
    };
    let (tr, va, te) = (keys(Split::Train), keys(Split::Valid), keys(Split::Test));
    assert!(tr.is_disjoint(&va) && tr.is_disjoint(&te) && va.is_disjoint(&te));
    assert!(corpus.indices(Split::Train).len() >= corpus.len() * 7 / 10);
}

#[test]
fn random_split_sizes_and_seed_determinism() {
    let c = halogen_corpus("s", synthetic_molecules(57, 3)).unwrap();
    let a = split(c.clone(), SplitMode::Random, 4).unwrap();
    assert_eq!(a.indices(Split::Train).len(), 45);
    assert_eq!(a.indices(Split::Valid).len(), 5);
    assert_eq!(a.indices(Split::Test).len(), 7);
    assert_eq!(a.assignment, split(c.clone(), SplitMode::Random, 4).unwrap().assignment);
    assert_ne!(a.assignment, split(c, SplitMode::Random, 5).unwrap().assignment);
}

#[test]
fn finetune_separates_a_separable_task() {
    let kg = bundled_kg().unwrap();
    let corpus = split(halogen_corpus("h", synthetic_molecules(120, 9)).unwrap(), SplitMode::Random, 1).unwrap();
    let cfg = small_pretrain(0);
    let model = Model::init(&corpus.molecules, &kg, None, &cfg.encoder(), 0).unwrap();
    let ds = DownstreamConfig { max_epochs: 40, ..DownstreamConfig::default() };
    let r = finetune(&model, &kg, &corpus, Protocol::FineTune, EncoderKind::Kmpnn, &ds).unwrap();
    assert!(r.test > 0.95, "test AUC {} valid {} best {} run {} losses {:?}", r.test, r.valid, r.best_epoch, r.epochs_run, r.train_losses);
    assert_eq!(r.metric, "roc_auc");
}

#[test]
fn regression_task_reports_rmse() {
    let kg = bundled_kg().unwrap();
    let corpus = split(heteroatom_corpus("r", synthetic_molecules(60, 2)).unwrap(), SplitMode::Random, 0).unwrap();
    let model = Model::init(&corpus.molecules, &kg, None, &small_pretrain(0).encoder(), 0).unwrap();
    let ds = DownstreamConfig { max_epochs: 10, ..DownstreamConfig::default() };
    let r = finetune(&model, &kg, &corpus, Protocol::Linear, EncoderKind::Gcn, &ds).unwrap();
    assert_eq!(r.metric, "rmse");
    assert!(r.test.is_finite() && r.test >= 0.0);
}

#[test]
fn pretraining_is_deterministic_and_drops_the_head() {
    let kg = bundled_kg().unwrap();
    let corpus = synthetic_molecules(24, 1);
    let emb = random_embedding(&kg, ATTR_DIM, 0).unwrap();
    let cfg = small_pretrain(3);
    let a = pretrain(&corpus, &kg, Some(&emb), &cfg).unwrap();
    let b = pretrain(&corpus, &kg, Some(&emb), &cfg).unwrap();
    assert_eq!(a.epoch_losses, b.epoch_losses);
    let meta = PretrainOutcome::metadata(&cfg);
    assert_eq!(a.model.to_checkpoint(&meta).to_bytes().unwrap(), b.model.to_checkpoint(&meta).to_bytes().unwrap());
    assert!(a.model.params.names().all(|n| !n.starts_with("head.")));
    let c = pretrain(&corpus, &kg, Some(&emb), &small_pretrain(4)).unwrap();
    assert_ne!(a.epoch_losses, c.epoch_losses);
}

#[test]
fn checkpoint_file_round_trip_and_attention_stability() {
    let kg = bundled_kg().unwrap();
    let corpus = synthetic_molecules(16, 5);
    let out = pretrain(&corpus, &kg, None, &PretrainConfig { knowledge_init: false, ..small_pretrain(1) }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    out.model.to_checkpoint(&BTreeMap::new()).write_to(std::fs::File::create(&path).unwrap()).unwrap();
    let loaded = Model::from_checkpoint(&Checkpoint::read_from(std::fs::File::open(&path).unwrap()).unwrap()).unwrap();
    let mols = bundled_molecules();
    let first = attention_csv(&dump_attention(&loaded, &mols[..20], &kg).unwrap());
    let second = attention_csv(&dump_attention(&loaded, &mols[..20], &kg).unwrap());
    assert_eq!(first, second);
    let direct = attention_csv(&dump_attention(&out.model, &mols[..20], &kg).unwrap());
    assert_eq!(first, direct);
}

#[test]
fn small_ablation_table_round_trips() {
    let kg = bundled_kg().unwrap();
    let emb = random_embedding(&kg, ATTR_DIM, 0).unwrap();
    let corpus = synthetic_molecules(24, 11);
    let datasets = vec![
        split(halogen_corpus("halogen", synthetic_molecules(40, 12)).unwrap(), SplitMode::Random, 0).unwrap(),
        split(heteroatom_corpus("hetero", synthetic_molecules(40, 13)).unwrap(), SplitMode::Random, 0).unwrap(),
    ];
    let opts = AblationOptions { protocol: Protocol::Linear, include_no_contrast: true, ..AblationOptions::default() };
    let t = ablation_run(&corpus, &datasets, &kg, &emb, &small_pipeline(2), &opts).unwrap();
    assert_eq!(t.columns.len(), 5);
    assert_eq!(t.rows.len(), 2);
    assert!(t.batch_similarity[4].is_none());
    let text = t.to_csv();
    assert_eq!(AblationTable::from_csv(&text).unwrap().to_csv(), text);
    let rows = t.metric_rows();
    assert_eq!(metrics_from_csv(&metrics_to_csv(&rows).unwrap()).unwrap(), rows);
}

#[test]
fn config_rejects_inconsistent_widths() {
    let mut c = small_pipeline(0);
    c.pretrain.gcn_node_hidden = 16;
    assert!(matches!(PipelineConfig::from_toml(&c.to_toml()), Err(PipelineError::ConfigInvalid(_))));
    let ok = small_pipeline(0);
    assert_eq!(PipelineConfig::from_toml(&ok.to_toml()).unwrap(), ok);
}
