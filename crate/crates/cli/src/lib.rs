//! The `chemcl` command line: builds and embeds the element knowledge graph,
//! pretrains encoders contrastively, evaluates them downstream, and dumps
//! attention for inspection.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;

use anyhow::{Context, Result};
use chemcl::augment::{augment, UnknownElementPolicy};
use chemcl::elementkg::{
    binning_from_tsv, build_kg, kg_stats, ElementTable, BUNDLED_BINNING_TSV, BUNDLED_ELEMENTS_CSV,
};
use chemcl::kgembed::{rank_eval, train_rotate, KgEmbedding};
use chemcl::pipeline::ablation::AblationOptions;
use chemcl::pipeline::metrics::metrics_to_csv;
use chemcl::pipeline::*;
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

mod config;
mod sources;

pub use config::{flag_name, section_keys};

/// Usage problems exit with 2, failures of the work itself with 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Domain(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Domain(e)
    }
}

#[derive(Parser)]
#[command(name = "chemcl", version, about = "Knowledge-augmented molecular contrastive learning", arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Common {
    /// Seed applied to every stage (overrides config values)
    #[arg(long)]
    seed: Option<u64>,
    /// TOML config file with [pretrain], [downstream] and [kg_embedding] sections
    #[arg(long, env = "CHEMCL_CONFIG")]
    config: Option<String>,
    /// Override any config key, e.g. `--set kg_embedding.epoch=50`
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Classification,
    Regression,
}

impl From<TaskArg> for TaskKind {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Classification => TaskKind::Classification,
            TaskArg::Regression => TaskKind::Regression,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Random,
    Scaffold,
}

impl From<ModeArg> for SplitMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Random => SplitMode::Random,
            ModeArg::Scaffold => SplitMode::Scaffold,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ProtocolArg {
    FineTune,
    Linear,
}

impl From<ProtocolArg> for Protocol {
    fn from(p: ProtocolArg) -> Self {
        match p {
            ProtocolArg::FineTune => Protocol::FineTune,
            ProtocolArg::Linear => Protocol::Linear,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum EncoderArg {
    Kmpnn,
    Gcn,
}

impl From<EncoderArg> for EncoderKind {
    fn from(e: EncoderArg) -> Self {
        match e {
            EncoderArg::Kmpnn => EncoderKind::Kmpnn,
            EncoderArg::Gcn => EncoderKind::Gcn,
        }
    }
}

const MOLECULES_HELP: &str = "`bundled`, `synthetic:COUNT[:SEED]`, or a SMILES file";
const DATASET_HELP: &str = "`halogen:COUNT[:SEED]`, `heteroatoms:COUNT[:SEED]`, or a SMILES<TAB>label file";

#[derive(Subcommand)]
enum Cmd {
    /// Build the element knowledge graph and write its triples as TSV
    BuildKg {
        /// Element table CSV (default: the bundled periodic table)
        #[arg(long)]
        elements: Option<String>,
        /// Binning TSV (default: reference binning for the bundled table, 4 equal-frequency bins otherwise)
        #[arg(long)]
        binning: Option<String>,
        #[arg(long)]
        out: String,
        #[command(flatten)]
        common: Common,
    },
    /// Train the rotation embedding of the knowledge graph
    EmbedKg {
        /// Triple TSV from build-kg (default: bundled graph)
        #[arg(long)]
        kg: Option<String>,
        #[arg(long)]
        out: String,
        #[command(flatten)]
        common: Common,
    },
    /// Write knowledge-augmented graphs as edge lists
    Augment {
        #[arg(long, default_value = "bundled", help = MOLECULES_HELP)]
        molecules: String,
        #[arg(long)]
        kg: Option<String>,
        #[arg(long)]
        out: String,
        #[command(flatten)]
        common: Common,
    },
    /// Contrastive pretraining; writes an encoder checkpoint
    Pretrain {
        #[arg(long, default_value = "bundled", help = MOLECULES_HELP)]
        molecules: String,
        #[arg(long)]
        kg: Option<String>,
        /// Embedding from embed-kg (trained on the fly when knowledge init is on and this is absent)
        #[arg(long)]
        kg_embedding: Option<String>,
        #[arg(long)]
        out: String,
        /// Per-epoch loss CSV
        #[arg(long)]
        losses: Option<String>,
        /// Start from the full-scale hyperparameters instead of the desk defaults
        #[arg(long)]
        paper_scale: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Assign train/valid/test splits to a labeled dataset
    Split {
        #[arg(long, help = DATASET_HELP)]
        dataset: String,
        #[arg(long, value_enum, default_value = "classification")]
        task: TaskArg,
        #[arg(long, value_enum, default_value = "scaffold")]
        mode: ModeArg,
        #[arg(long)]
        out: String,
        #[command(flatten)]
        common: Common,
    },
    /// Train a predictor on a labeled dataset and report the test metric
    Finetune {
        /// Pretrained checkpoint (default: random initialization)
        #[arg(long)]
        checkpoint: Option<String>,
        #[arg(long, help = DATASET_HELP)]
        dataset: String,
        #[arg(long, value_enum, default_value = "classification")]
        task: TaskArg,
        #[arg(long, value_enum, default_value = "scaffold")]
        split_mode: ModeArg,
        #[arg(long, value_enum, default_value = "fine-tune")]
        protocol: ProtocolArg,
        #[arg(long, value_enum, default_value = "kmpnn")]
        encoder: EncoderArg,
        #[arg(long)]
        kg: Option<String>,
        /// Metrics CSV (dataset,protocol,metric,value,seed)
        #[arg(long)]
        metrics: String,
        /// Test-split predictions CSV
        #[arg(long)]
        predictions: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Dump per-atom attention weights of a checkpoint
    Explain {
        #[arg(long)]
        checkpoint: String,
        #[arg(long, default_value = "bundled", help = MOLECULES_HELP)]
        molecules: String,
        #[arg(long)]
        kg: Option<String>,
        #[arg(long)]
        out: String,
        #[command(flatten)]
        common: Common,
    },
    /// Four-way ablation of knowledge init and negative mining
    Ablate {
        #[arg(long, default_value = "bundled", help = MOLECULES_HELP)]
        molecules: String,
        /// Repeat for several datasets
        #[arg(long, required = true, help = DATASET_HELP)]
        dataset: Vec<String>,
        #[arg(long, value_enum, default_value = "classification")]
        task: TaskArg,
        #[arg(long, value_enum, default_value = "scaffold")]
        split_mode: ModeArg,
        #[arg(long, value_enum, default_value = "fine-tune")]
        protocol: ProtocolArg,
        #[arg(long, value_enum, default_value = "kmpnn")]
        encoder: EncoderArg,
        #[arg(long)]
        kg: Option<String>,
        #[arg(long)]
        kg_embedding: Option<String>,
        /// Add a column trained on the downstream loss without pretraining
        #[arg(long)]
        no_contrast: bool,
        #[arg(long)]
        paper_scale: bool,
        #[arg(long)]
        out: String,
        #[arg(long)]
        metrics: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Print knowledge graph statistics (and corpus counts with --molecules)
    Stats {
        #[arg(long)]
        kg: Option<String>,
        #[arg(long, help = MOLECULES_HELP)]
        molecules: Option<String>,
        #[command(flatten)]
        common: Common,
    },
}

/// Config sections whose keys become flags of each command.
fn flag_sections(command: &str) -> &'static [&'static str] {
    match command {
        "pretrain" | "ablate" => &["pretrain"],
        "finetune" => &["downstream"],
        "embed-kg" => &["kg_embedding"],
        _ => &[],
    }
}

fn command() -> clap::Command {
    let mut cmd = Cli::command();
    for name in ["pretrain", "ablate", "finetune", "embed-kg"] {
        cmd = cmd.mut_subcommand(name, |mut sub| {
            for &section in flag_sections(name) {
                sub = config::add_section_flags(sub, section);
            }
            sub
        });
    }
    cmd
}

/// Parses `argv` (program name first), runs the command, and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .try_init();
    let matches = match command().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return 2;
        }
    };
    let (_, sub) = matches.subcommand().expect("subcommand required");
    match dispatch(cli.command, sub) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(CliError::Domain(e)) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn resolve(common: &Common, paper_scale: bool, matches: &clap::ArgMatches, command: &str) -> Result<PipelineConfig, CliError> {
    config::resolve(
        &config::Layers {
            paper_scale,
            file: common.config.as_deref(),
            seed: common.seed,
            sets: &common.sets,
        },
        matches,
        flag_sections(command),
    )
}

fn embedding_for(kg: &chemcl::ElementKG, path: Option<&str>, cfg: &KgEmbedConfig) -> Result<KgEmbedding> {
    Ok(match path {
        Some(p) => sources::embedding(p)?,
        None => {
            log::info!("training the knowledge graph embedding ({} epochs)", cfg.epoch);
            train_rotate(kg, &cfg.rotate())?.0
        }
    })
}

fn dispatch(cmd: Cmd, m: &clap::ArgMatches) -> Result<(), CliError> {
    match cmd {
        Cmd::BuildKg { elements, binning, out, common } => {
            resolve(&common, false, m, "build-kg")?;
            let kg = match (&elements, &binning) {
                (None, None) => chemcl::elementkg::bundled_kg().map_err(anyhow::Error::from)?,
                _ => {
                    let table = match &elements {
                        Some(p) => ElementTable::from_csv_str(&std::fs::read_to_string(p).with_context(|| format!("cannot read {p}"))?),
                        None => ElementTable::from_csv_str(BUNDLED_ELEMENTS_CSV),
                    }
                    .map_err(anyhow::Error::from)?;
                    let specs = match (&binning, &elements) {
                        (Some(p), _) => binning_from_tsv(&std::fs::read_to_string(p).with_context(|| format!("cannot read {p}"))?),
                        (None, None) => binning_from_tsv(BUNDLED_BINNING_TSV),
                        (None, Some(_)) => table.default_binning(4),
                    }
                    .map_err(anyhow::Error::from)?;
                    build_kg(&table, &specs).map_err(anyhow::Error::from)?
                }
            };
            let s = kg_stats(&kg);
            log::info!("{} triples over {} entities", s.triples, s.entities);
            sources::write(&out, kg.to_tsv())?;
        }
        Cmd::EmbedKg { kg, out, common } => {
            let cfg = resolve(&common, false, m, "embed-kg")?;
            let kg = sources::kg(kg.as_deref())?;
            let (emb, report) = train_rotate(&kg, &cfg.kg_embedding.rotate()).map_err(anyhow::Error::from)?;
            let ranks = rank_eval(&emb, &kg).map_err(anyhow::Error::from)?;
            log::info!(
                "final loss {:.4}, tail MRR {:.4}, hits@1 {:.4}",
                report.epoch_losses.last().copied().unwrap_or(f64::NAN),
                ranks.mrr,
                ranks.hits_at_1
            );
            sources::write(&out, emb.to_text())?;
        }
        Cmd::Augment { molecules, kg, out, common } => {
            resolve(&common, false, m, "augment")?;
            let kg = sources::kg(kg.as_deref())?;
            let mut text = String::new();
            for (i, mol) in sources::molecules(&molecules)?.iter().enumerate() {
                let g = augment(mol, &kg, UnknownElementPolicy::Skip).map_err(anyhow::Error::from)?;
                let _ = writeln!(
                    text,
                    "# {i} {} atoms={} attributes={} edges={}",
                    mol.source_text,
                    g.atom_count(),
                    g.attribute_count(),
                    g.edges.len()
                );
                text.push_str(&g.debug_edges());
            }
            sources::write(&out, text)?;
        }
        Cmd::Pretrain { molecules, kg, kg_embedding, out, losses, paper_scale, common } => {
            let cfg = resolve(&common, paper_scale, m, "pretrain")?;
            let kg = sources::kg(kg.as_deref())?;
            let corpus = sources::molecules(&molecules)?;
            let emb = if cfg.pretrain.knowledge_init {
                Some(embedding_for(&kg, kg_embedding.as_deref(), &cfg.kg_embedding)?)
            } else {
                None
            };
            let outcome = pretrain(&corpus, &kg, emb.as_ref(), &cfg.pretrain).map_err(anyhow::Error::from)?;
            let ck = outcome.model.to_checkpoint(&PretrainOutcome::metadata(&cfg.pretrain));
            sources::write(&out, ck.to_bytes().map_err(anyhow::Error::from)?)?;
            if let Some(path) = losses {
                let mut text = String::from("epoch,loss,mean_batch_tanimoto\n");
                for (e, (l, s)) in outcome.epoch_losses.iter().zip(&outcome.batch_similarity).enumerate() {
                    let _ = writeln!(text, "{},{l:.9},{s:.6}", e + 1);
                }
                sources::write(&path, text)?;
            }
        }
        Cmd::Split { dataset, task, mode, out, common } => {
            let cfg = resolve(&common, false, m, "split")?;
            let corpus = sources::dataset(&dataset, task.into())?;
            let corpus = split(corpus, mode.into(), cfg.downstream.seed).map_err(anyhow::Error::from)?;
            let mut text = String::from("index\tsmiles\tsplit\n");
            for (i, (mol, s)) in corpus.molecules.iter().zip(&corpus.assignment).enumerate() {
                let _ = writeln!(text, "{i}\t{}\t{}", mol.source_text, s.name());
            }
            sources::write(&out, text)?;
        }
        Cmd::Finetune { checkpoint, dataset, task, split_mode, protocol, encoder, kg, metrics, predictions, common } => {
            let cfg = resolve(&common, false, m, "finetune")?;
            let kg = sources::kg(kg.as_deref())?;
            let corpus = split(sources::dataset(&dataset, task.into())?, split_mode.into(), cfg.downstream.seed)
                .map_err(anyhow::Error::from)?;
            let model = match &checkpoint {
                Some(p) => sources::checkpoint(p)?,
                None => Model::init(&corpus.molecules, &kg, None, &cfg.pretrain.encoder(), cfg.downstream.seed)
                    .map_err(anyhow::Error::from)?,
            };
            let protocol: Protocol = protocol.into();
            let r = finetune(&model, &kg, &corpus, protocol, encoder.into(), &cfg.downstream).map_err(anyhow::Error::from)?;
            let row = MetricRow {
                dataset: corpus.name.clone(),
                protocol: protocol.name().into(),
                metric: r.metric.into(),
                value: r.test,
                seed: cfg.downstream.seed,
            };
            sources::write(&metrics, metrics_to_csv(&[row]).map_err(anyhow::Error::from)?)?;
            if let Some(path) = predictions {
                let mut text = String::from("index,smiles");
                for t in 0..corpus.tasks() {
                    let _ = write!(text, ",task{t}");
                }
                text.push('\n');
                for (&i, p) in corpus.indices(Split::Test).iter().zip(&r.test_predictions) {
                    let _ = write!(text, "{i},{}", corpus.molecules[i].source_text);
                    for v in p {
                        let _ = write!(text, ",{v:.9}");
                    }
                    text.push('\n');
                }
                sources::write(&path, text)?;
            }
        }
        Cmd::Explain { checkpoint, molecules, kg, out, common } => {
            resolve(&common, false, m, "explain")?;
            let kg = sources::kg(kg.as_deref())?;
            let model = sources::checkpoint(&checkpoint)?;
            let mols = sources::molecules(&molecules)?;
            let rows = dump_attention(&model, &mols, &kg).map_err(anyhow::Error::from)?;
            sources::write(&out, attention_csv(&rows))?;
        }
        Cmd::Ablate {
            molecules,
            dataset,
            task,
            split_mode,
            protocol,
            encoder,
            kg,
            kg_embedding,
            no_contrast,
            paper_scale,
            out,
            metrics,
            common,
        } => {
            let cfg = resolve(&common, paper_scale, m, "ablate")?;
            let kg = sources::kg(kg.as_deref())?;
            let corpus = sources::molecules(&molecules)?;
            let emb = embedding_for(&kg, kg_embedding.as_deref(), &cfg.kg_embedding)?;
            let datasets = dataset
                .iter()
                .map(|d| {
                    let c = sources::dataset(d, task.into())?;
                    Ok(split(c, split_mode.into(), cfg.downstream.seed)?)
                })
                .collect::<Result<Vec<_>>>()?;
            let opts = AblationOptions {
                protocol: protocol.into(),
                encoder: encoder.into(),
                include_no_contrast: no_contrast,
            };
            let table = ablation_run(&corpus, &datasets, &kg, &emb, &cfg, &opts).map_err(anyhow::Error::from)?;
            sources::write(&out, table.to_csv())?;
            if let Some(path) = metrics {
                sources::write(&path, metrics_to_csv(&table.metric_rows()).map_err(anyhow::Error::from)?)?;
            }
        }
        Cmd::Stats { kg, molecules, common } => {
            resolve(&common, false, m, "stats")?;
            let graph = sources::kg(kg.as_deref())?;
            print!("{}", stats_table(&graph));
            if let Some(spec) = molecules {
                let mols = sources::molecules(&spec)?;
                let atoms: usize = mols.iter().map(|m| m.atom_count()).sum();
                let bonds: usize = mols.iter().map(|m| m.bond_count()).sum();
                println!("Molecules\t{}\nAtoms\t{atoms}\nBonds\t{bonds}", mols.len());
            }
        }
    }
    Ok(())
}

/// Element, attribute, entity, relation-type and triple counts, one per line.
pub fn stats_table(kg: &chemcl::ElementKG) -> String {
    let s = kg_stats(kg);
    let rows: BTreeMap<usize, (&str, usize)> = [
        ("Elements", s.elements),
        ("Attributes", s.attributes),
        ("Entities", s.entities),
        ("Relation Types", s.relation_types),
        ("KG Triples", s.triples),
    ]
    .into_iter()
    .enumerate()
    .collect();
    rows.values().map(|(k, v)| format!("{k}\t{v}\n")).collect()
}
