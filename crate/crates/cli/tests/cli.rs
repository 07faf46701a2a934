use std::path::Path;
use std::process::{Command, Output};

use numcore::Checkpoint;

const SMALL: &str = "[pretrain]
epoch = 2
batch_size = 8
GCN_node_hidden = 8
KMPNN_node_hidden = 8
node_out = 8
KMPNN_step = 2
projection_hidden = 16
projection_dim = 8

[downstream]
max_epochs = 8
patience = 4

[kg_embedding]
epoch = 3
";

fn chemcl(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chemcl"))
        .args(args)
        .current_dir(dir)
        .env_remove("CHEMCL_CONFIG")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), SMALL).unwrap();
    dir
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn no_arguments_prints_usage_and_exits_2() {
    let dir = setup();
    let o = chemcl(dir.path(), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage: chemcl"));
}

#[test]
fn unknown_flag_is_a_usage_error_naming_the_flag() {
    let dir = setup();
    let o = chemcl(dir.path(), &["pretrain", "--out", "x", "--bogus-flag", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--bogus-flag"));
    let o = chemcl(dir.path(), &["pretrain", "--out", "x", "--set", "pretrain.no_such_key=1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no_such_key"));
}

#[test]
fn every_command_has_help_seed_and_config() {
    let dir = setup();
    for cmd in ["build-kg", "embed-kg", "augment", "pretrain", "split", "finetune", "explain", "ablate", "stats"] {
        let o = chemcl(dir.path(), &[cmd, "--help"]);
        assert_eq!(o.status.code(), Some(0), "{cmd}");
        let text = String::from_utf8_lossy(&o.stdout);
        assert!(text.contains("--seed") && text.contains("--config"), "{cmd}");
    }
}

#[test]
fn domain_errors_exit_1() {
    let dir = setup();
    let o = chemcl(dir.path(), &["explain", "--checkpoint", "missing.ckpt", "--out", "a.csv"]);
    assert_eq!(o.status.code(), Some(1));
    std::fs::write(dir.path().join("bad.smi"), "C1CC\n").unwrap();
    let o = chemcl(dir.path(), &["augment", "--molecules", "bad.smi", "--out", "a.txt"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn stats_prints_knowledge_graph_counts() {
    let dir = setup();
    let o = chemcl(dir.path(), &["build-kg", "--out", "kg.tsv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = chemcl(dir.path(), &["stats", "--kg", "kg.tsv"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let rows: Vec<(&str, usize)> = text
        .lines()
        .map(|l| {
            let (k, v) = l.split_once('\t').unwrap();
            (k, v.parse().unwrap())
        })
        .collect();
    let names: Vec<&str> = rows.iter().map(|r| r.0).collect();
    assert_eq!(names, ["Elements", "Attributes", "Entities", "Relation Types", "KG Triples"]);
    assert_eq!(rows[2].1, rows[0].1 + rows[1].1);
    let bundled = chemcl(dir.path(), &["stats"]);
    assert_eq!(String::from_utf8(bundled.stdout).unwrap(), text);
}

#[test]
fn pretrain_twice_gives_identical_checkpoints() {
    let dir = setup();
    let args = |out: &'static str| {
        vec!["pretrain", "--config", "c.toml", "--seed", "7", "--molecules", "synthetic:16:2", "--out", out]
    };
    for out in ["a.ckpt", "b.ckpt"] {
        let o = chemcl(dir.path(), &args(out));
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let a = std::fs::read(dir.path().join("a.ckpt")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.ckpt")).unwrap());
    let o = chemcl(dir.path(), &["pretrain", "--config", "c.toml", "--seed", "8", "--molecules", "synthetic:16:2", "--out", "c.ckpt"]);
    assert!(o.status.success());
    assert_ne!(a, std::fs::read(dir.path().join("c.ckpt")).unwrap());
}

#[test]
fn flags_override_file_and_environment_supplies_config() {
    let dir = setup();
    let o = Command::new(env!("CARGO_BIN_EXE_chemcl"))
        .args(["pretrain", "--molecules", "synthetic:12", "--epoch", "1", "--knowledge-init", "false"])
        .args(["--out", "m.ckpt", "--losses", "l.csv"])
        .current_dir(dir.path())
        .env("CHEMCL_CONFIG", "c.toml")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let losses = std::fs::read_to_string(dir.path().join("l.csv")).unwrap();
    assert_eq!(losses.lines().count(), 2, "{losses}");
    let ck = Checkpoint::read_from(std::fs::File::open(dir.path().join("m.ckpt")).unwrap()).unwrap();
    let cfg = &ck.meta["pretrain_config"];
    // file value kept, flag value applied
    assert!(cfg.contains("GCN_node_hidden = 8"), "{cfg}");
    assert!(cfg.contains("epoch = 1"), "{cfg}");
    assert!(cfg.contains("knowledge_init = false"), "{cfg}");
}

#[test]
fn paper_scale_changes_the_starting_values() {
    let dir = setup();
    let o = chemcl(
        dir.path(),
        &["pretrain", "--paper-scale", "--molecules", "synthetic:12", "--knowledge-init", "false"]
            .into_iter()
            .chain(["--epoch", "1", "--gcn-node-hidden", "8", "--kmpnn-node-hidden", "8", "--node-out", "8"])
            .chain(["--kmpnn-step", "1", "--out", "p.ckpt"])
            .collect::<Vec<_>>(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let ck = Checkpoint::read_from(std::fs::File::open(dir.path().join("p.ckpt")).unwrap()).unwrap();
    let cfg = &ck.meta["pretrain_config"];
    assert!(cfg.contains("batch_size = 256"), "{cfg}");
    assert!(cfg.contains("lr = 0.0001"), "{cfg}");
}

#[test]
fn downstream_explain_and_ablate_write_their_files() {
    let dir = setup();
    let run = |args: &[&str]| {
        let o = chemcl(dir.path(), args);
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
    };
    let read = |f: &str| std::fs::read_to_string(dir.path().join(f)).unwrap();
    run(&["embed-kg", "--config", "c.toml", "--out", "emb.txt"]);
    run(&["pretrain", "--config", "c.toml", "--molecules", "synthetic:16", "--kg-embedding", "emb.txt", "--out", "m.ckpt"]);
    run(&[
        "finetune", "--config", "c.toml", "--checkpoint", "m.ckpt", "--dataset", "halogen:40", "--split-mode", "random",
        "--protocol", "linear", "--metrics", "metrics.csv", "--predictions", "pred.csv",
    ]);
    let metrics = read("metrics.csv");
    assert!(metrics.starts_with("dataset,protocol,metric,value,seed\nhalogen,linear,roc_auc,"), "{metrics}");
    assert!(read("pred.csv").starts_with("index,smiles,task0\n"));

    run(&["explain", "--checkpoint", "m.ckpt", "--molecules", "synthetic:5", "--out", "a1.csv"]);
    run(&["explain", "--checkpoint", "m.ckpt", "--molecules", "synthetic:5", "--out", "a2.csv"]);
    assert_eq!(read("a1.csv"), read("a2.csv"));
    assert!(read("a1.csv").starts_with("mol_index,atom_index,neighbor_kind,neighbor_label,weight\n"));

    run(&["split", "--dataset", "heteroatoms:30", "--task", "regression", "--out", "s1.tsv"]);
    run(&["split", "--dataset", "heteroatoms:30", "--task", "regression", "--out", "s2.tsv"]);
    assert_eq!(read("s1.tsv"), read("s2.tsv"));

    run(&[
        "ablate", "--config", "c.toml", "--molecules", "synthetic:16", "--kg-embedding", "emb.txt", "--dataset",
        "halogen:30", "--split-mode", "random", "--protocol", "linear", "--out", "ab.csv", "--metrics", "abm.csv",
    ]);
    let table = read("ab.csv");
    assert!(table.contains("\nDataset,w/oALL,w/oInit,w/oNS,ALL\n"), "{table}");
    assert!(read("abm.csv").lines().count() == 5);
}
