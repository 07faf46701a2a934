//! The four-way ablation over knowledge-feature initialization and hard
//! negative mining, plus an optional no-pretraining column, written as a
//! dataset-by-variant table.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use super::data::{LabeledCorpus, TaskKind};
use super::downstream::{finetune, metric_name, Protocol};
use super::metrics::MetricRow;
use super::model::{EncoderKind, Model};
use super::pretrain::pretrain;
use super::{PipelineError, Result};
use crate::elementkg::ElementKG;
use crate::kgembed::KgEmbedding;
use crate::smiles::MolecularGraph;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationVariant {
    pub name: String,
    pub knowledge_init: bool,
    pub negative_mining: bool,
    /// False: no pretraining; the encoder is trained on the downstream loss
    /// from random initialization.
    pub contrast: bool,
}

impl AblationVariant {
    fn new(name: &str, knowledge_init: bool, negative_mining: bool, contrast: bool) -> Self {
        Self { name: name.into(), knowledge_init, negative_mining, contrast }
    }

    /// Columns in table order: w/oALL, w/oInit, w/oNS, ALL.
    pub fn table_columns() -> Vec<Self> {
        vec![
            Self::new("w/oALL", false, false, true),
            Self::new("w/oInit", false, true, true),
            Self::new("w/oNS", true, false, true),
            Self::new("ALL", true, true, true),
        ]
    }

    pub fn no_contrast() -> Self {
        Self::new("NoContrast", false, false, false)
    }

    fn header(&self, similarity: Option<f64>) -> String {
        let mut s = format!(
            "# column={} knowledge_init={} negative_mining={} contrast={}",
            self.name, self.knowledge_init, self.negative_mining, self.contrast
        );
        if let Some(v) = similarity {
            s.push_str(&format!(" mean_batch_tanimoto={v:.6}"));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationOptions {
    pub protocol: Protocol,
    pub encoder: EncoderKind,
    pub include_no_contrast: bool,
}

impl Default for AblationOptions {
    fn default() -> Self {
        Self { protocol: Protocol::FineTune, encoder: EncoderKind::Kmpnn, include_no_contrast: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub dataset: String,
    pub kind: TaskKind,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub columns: Vec<AblationVariant>,
    /// Mean within-batch Tanimoto over pretraining epochs, per column;
    /// `None` for columns without pretraining.
    pub batch_similarity: Vec<Option<f64>>,
    pub rows: Vec<AblationRow>,
    pub seed: u64,
    pub protocol: String,
}

impl AblationTable {
    fn averages(&self) -> Vec<(&'static str, Vec<f64>)> {
        let mut out = Vec::new();
        for (label, kind) in [("Ave(Cls)", TaskKind::Classification), ("Ave(Reg)", TaskKind::Regression)] {
            let rows: Vec<&AblationRow> = self.rows.iter().filter(|r| r.kind == kind).collect();
            if rows.is_empty() {
                continue;
            }
            let avg = (0..self.columns.len())
                .map(|c| rows.iter().map(|r| r.values[c]).sum::<f64>() / rows.len() as f64)
                .collect();
            out.push((label, avg));
        }
        out
    }

    /// Comment lines with each column's settings, then
    /// `Dataset,<columns...>`, one row per dataset, and class averages.
    pub fn to_csv(&self) -> String {
        let mut out = format!("# seed={} protocol={}\n", self.seed, self.protocol);
        for (c, s) in self.columns.iter().zip(&self.batch_similarity) {
            out.push_str(&c.header(*s));
            out.push('\n');
        }
        out.push_str("Dataset");
        for c in &self.columns {
            out.push(',');
            out.push_str(&c.name);
        }
        out.push('\n');
        let fmt_row = |name: &str, values: &[f64]| {
            let mut line = name.to_string();
            for v in values {
                line.push_str(&format!(",{v:.6}"));
            }
            line.push('\n');
            line
        };
        for r in &self.rows {
            let kind = match r.kind {
                TaskKind::Classification => "cls",
                TaskKind::Regression => "reg",
            };
            out.push_str(&fmt_row(&format!("{}[{kind}]", r.dataset), &r.values));
        }
        for (label, avg) in self.averages() {
            out.push_str(&fmt_row(label, &avg));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |m: &str| PipelineError::Parse(format!("ablation table: {m}"));
        let mut seed = 0;
        let mut protocol = String::new();
        let mut columns = Vec::new();
        let mut batch_similarity = Vec::new();
        let mut rows = Vec::new();
        let mut header_seen = false;
        for line in text.lines() {
            if let Some(rest) = line.strip_prefix("# ") {
                let kv: BTreeMap<&str, &str> = rest.split(' ').filter_map(|p| p.split_once('=')).collect();
                if let Some(col) = kv.get("column") {
                    let flag = |k: &str| kv.get(k).map(|v| *v == "true").ok_or_else(|| bad("missing flag"));
                    columns.push(AblationVariant::new(col, flag("knowledge_init")?, flag("negative_mining")?, flag("contrast")?));
                    batch_similarity.push(kv.get("mean_batch_tanimoto").and_then(|v| v.parse().ok()));
                } else {
                    seed = kv.get("seed").and_then(|v| v.parse().ok()).ok_or_else(|| bad("missing seed"))?;
                    protocol = kv.get("protocol").ok_or_else(|| bad("missing protocol"))?.to_string();
                }
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if !header_seen {
                let names: Vec<&str> = columns.iter().map(|c| c.name.as_str()).collect();
                if fields.first() != Some(&"Dataset") || fields[1..] != names[..] {
                    return Err(bad("column header does not match the settings lines"));
                }
                header_seen = true;
                continue;
            }
            if fields.len() != columns.len() + 1 {
                return Err(bad("row width"));
            }
            let values = fields[1..]
                .iter()
                .map(|v| v.parse::<f64>().map_err(|_| bad("value")))
                .collect::<Result<Vec<_>>>()?;
            let name = fields[0];
            if name.starts_with("Ave(") {
                continue;
            }
            let (dataset, kind) = if let Some(d) = name.strip_suffix("[cls]") {
                (d, TaskKind::Classification)
            } else if let Some(d) = name.strip_suffix("[reg]") {
                (d, TaskKind::Regression)
            } else {
                return Err(bad("dataset name lacks a task tag"));
            };
            rows.push(AblationRow { dataset: dataset.into(), kind, values });
        }
        if !header_seen {
            return Err(bad("no column header"));
        }
        Ok(Self { columns, batch_similarity, rows, seed, protocol })
    }

    /// One metrics-CSV row per cell; the protocol field names the column.
    pub fn metric_rows(&self) -> Vec<MetricRow> {
        let mut out = Vec::new();
        for r in &self.rows {
            for (c, v) in self.columns.iter().zip(&r.values) {
                out.push(MetricRow {
                    dataset: r.dataset.clone(),
                    protocol: format!("{}:{}", self.protocol, c.name),
                    metric: metric_name(r.kind).into(),
                    value: *v,
                    seed: self.seed,
                });
            }
        }
        out
    }
}

/// Pretrains once per column on `corpus` and evaluates every (already
/// split) dataset under `opts.protocol`. All columns share the base seed.
pub fn ablation_run(
    corpus: &[MolecularGraph],
    datasets: &[LabeledCorpus],
    kg: &ElementKG,
    kg_emb: &KgEmbedding,
    base: &PipelineConfig,
    opts: &AblationOptions,
) -> Result<AblationTable> {
    base.validate()?;
    let mut columns = AblationVariant::table_columns();
    if opts.include_no_contrast {
        columns.push(AblationVariant::no_contrast());
    }
    let mut batch_similarity = Vec::new();
    let mut values = vec![Vec::new(); datasets.len()];
    for col in &columns {
        log::info!("ablation column {}", col.name);
        let mut cfg = base.pretrain.clone();
        cfg.knowledge_init = col.knowledge_init;
        cfg.negative_mining = col.negative_mining;
        let emb = col.knowledge_init.then_some(kg_emb);
        let (model, similarity) = if col.contrast {
            let out = pretrain(corpus, kg, emb, &cfg)?;
            let mean = if out.batch_similarity.is_empty() {
                None
            } else {
                Some(out.batch_similarity.iter().sum::<f64>() / out.batch_similarity.len() as f64)
            };
            (out.model, mean)
        } else {
            (Model::init(corpus, kg, emb, &cfg.encoder(), cfg.seed)?, None)
        };
        batch_similarity.push(similarity);
        let protocol = if col.contrast { opts.protocol } else { Protocol::FineTune };
        for (d, ds) in datasets.iter().enumerate() {
            let r = finetune(&model, kg, ds, protocol, opts.encoder, &base.downstream)?;
            values[d].push(r.test);
        }
    }
    let rows = datasets
        .iter()
        .zip(values)
        .map(|(d, values)| AblationRow { dataset: d.name.clone(), kind: d.kind, values })
        .collect();
    Ok(AblationTable {
        columns,
        batch_similarity,
        rows,
        seed: base.pretrain.seed,
        protocol: opts.protocol.name().into(),
    })
}
