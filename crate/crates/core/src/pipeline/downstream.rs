//! Downstream evaluation. The fine-tune protocol trains encoder plus an MLP
//! predictor; the linear protocol freezes the encoder and fits one affine
//! layer on its graph embeddings. Both stop early on the validation metric.

use numcore::{AdamConfig, ParameterSet, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::DownstreamConfig;
use super::data::{LabeledCorpus, Split, TaskKind};
use super::metrics::{rmse, roc_auc};
use super::model::{augment_all, EncoderInputs, EncoderKind, Model};
use super::{PipelineError, Result};
use crate::elementkg::ElementKG;
use crate::encoders::{init_linear, linear};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    FineTune,
    Linear,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Self::FineTune => "fine_tune",
            Self::Linear => "linear",
        }
    }
}

impl std::str::FromStr for Protocol {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fine_tune" | "fine-tune" | "finetune" => Ok(Self::FineTune),
            "linear" => Ok(Self::Linear),
            other => Err(PipelineError::ProtocolUnknown(other.to_string())),
        }
    }
}

pub fn metric_name(kind: TaskKind) -> &'static str {
    match kind {
        TaskKind::Classification => "roc_auc",
        TaskKind::Regression => "rmse",
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneReport {
    pub protocol: Protocol,
    pub encoder: EncoderKind,
    pub metric: &'static str,
    pub valid: f64,
    pub test: f64,
    /// Epoch (1-based) whose parameters were kept.
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub train_losses: Vec<f64>,
    /// Test-split predictions in original label units (probabilities for
    /// classification), one row per test molecule.
    pub test_predictions: Vec<Vec<f64>>,
}

const PRED: &str = "pred";

/// Per-task standardization of regression targets, from the train split.
#[derive(Debug, Clone)]
struct TargetScale {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl TargetScale {
    fn fit(corpus: &LabeledCorpus, train: &[usize]) -> Self {
        let t = corpus.tasks();
        if corpus.kind == TaskKind::Classification {
            return Self { mean: vec![0.0; t], std: vec![1.0; t] };
        }
        let mut mean = vec![0.0; t];
        let mut std = vec![1.0; t];
        for k in 0..t {
            let vals: Vec<f64> = train.iter().filter_map(|&i| corpus.labels[i][k]).collect();
            if vals.is_empty() {
                continue;
            }
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64;
            mean[k] = m;
            std[k] = if var > 1e-12 { var.sqrt() } else { 1.0 };
        }
        Self { mean, std }
    }
}

/// Targets and presence mask for `members`, `[B, T]` each.
fn targets(corpus: &LabeledCorpus, scale: &TargetScale, members: &[usize]) -> Result<(Tensor, Tensor)> {
    let t = corpus.tasks();
    let mut y = Vec::with_capacity(members.len() * t);
    let mut m = Vec::with_capacity(members.len() * t);
    for &i in members {
        for k in 0..t {
            match corpus.labels[i][k] {
                Some(v) => {
                    y.push((v - scale.mean[k]) / scale.std[k]);
                    m.push(1.0);
                }
                None => {
                    y.push(0.0);
                    m.push(0.0);
                }
            }
        }
    }
    Ok((Tensor::from_vec(members.len(), t, y)?, Tensor::from_vec(members.len(), t, m)?))
}

/// Masked mean of binary cross-entropy on logits or squared error.
fn masked_loss<'t>(out: Var<'t>, y: Tensor, mask: Tensor, kind: TaskKind) -> Result<Var<'t>> {
    let tape = out.tape();
    let present = mask.data().iter().sum::<f64>().max(1.0);
    let y = tape.constant(y)?;
    let mask = tape.constant(mask)?;
    let per = match kind {
        TaskKind::Classification => {
            // softplus(s) - y s, with softplus(s) = relu(s) + log(1 + exp(-|s|))
            let abs = out.relu()?.add(out.neg()?.relu()?)?;
            let softplus = out.relu()?.add(abs.neg()?.exp()?.add_scalar(1.0)?.log()?)?;
            softplus.sub(y.mul(out)?)?
        }
        TaskKind::Regression => {
            let d = out.sub(y)?;
            d.mul(d)?
        }
    };
    Ok(per.mul(mask)?.sum()?.scale(1.0 / present)?)
}

/// Mean over tasks of the split metric; classification tasks lacking one of
/// the classes are skipped.
fn score(corpus: &LabeledCorpus, members: &[usize], outputs: &[Vec<f64>]) -> Result<f64> {
    let mut per_task = Vec::new();
    for k in 0..corpus.tasks() {
        let mut s = Vec::new();
        let mut y = Vec::new();
        for (row, &i) in members.iter().enumerate() {
            if let Some(v) = corpus.labels[i][k] {
                s.push(outputs[row][k]);
                y.push(v);
            }
        }
        match corpus.kind {
            TaskKind::Classification => {
                let labels: Vec<bool> = y.iter().map(|&v| v > 0.5).collect();
                match roc_auc(&s, &labels) {
                    Ok(a) => per_task.push(a),
                    Err(PipelineError::SingleClass) => {}
                    Err(e) => return Err(e),
                }
            }
            TaskKind::Regression if !s.is_empty() => per_task.push(rmse(&s, &y)?),
            TaskKind::Regression => {}
        }
    }
    if per_task.is_empty() {
        return Err(match corpus.kind {
            TaskKind::Classification => PipelineError::SingleClass,
            TaskKind::Regression => PipelineError::Metric("no labelled molecules in split".into()),
        });
    }
    Ok(per_task.iter().sum::<f64>() / per_task.len() as f64)
}

/// Higher is better for ROC-AUC, lower for RMSE. A tied metric (small
/// validation splits saturate AUC quickly) is broken by validation loss.
fn improves(kind: TaskKind, new: (f64, f64), best: (f64, f64)) -> bool {
    if new.0 == best.0 {
        return new.1 < best.1;
    }
    match kind {
        TaskKind::Classification => new.0 > best.0,
        TaskKind::Regression => new.0 < best.0,
    }
}

struct Trainer<'a> {
    corpus: &'a LabeledCorpus,
    protocol: Protocol,
    encoder: EncoderKind,
    model: &'a Model,
    inputs: EncoderInputs<'a>,
    /// Frozen embeddings for the linear protocol.
    frozen: Option<Tensor>,
    scale: TargetScale,
}

impl Trainer<'_> {
    fn forward<'t>(&self, tape: &'t Tape, params: &ParameterSet, members: &[usize]) -> Result<Var<'t>> {
        match self.protocol {
            Protocol::Linear => {
                let f = self.frozen.as_ref().expect("linear protocol has frozen features");
                let x = tape.constant(gather(f, members))?;
                Ok(linear(tape, params, PRED, x)?)
            }
            Protocol::FineTune => {
                let h = self.inputs.encode(
                    tape,
                    params,
                    &self.model.tables,
                    &self.model.encoder,
                    self.encoder,
                    members,
                )?;
                let x = linear(tape, params, &format!("{PRED}.l1"), h)?.relu()?;
                Ok(linear(tape, params, &format!("{PRED}.l2"), x)?)
            }
        }
    }

    /// Outputs in label units: probabilities or de-standardized values.
    fn predict(&self, params: &ParameterSet, members: &[usize]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(members.len());
        for chunk in members.chunks(64) {
            let tape = Tape::new();
            let raw = self.forward(&tape, params, chunk)?.value();
            for r in 0..raw.rows() {
                out.push(
                    raw.row_slice(r)
                        .iter()
                        .enumerate()
                        .map(|(k, &v)| match self.corpus.kind {
                            TaskKind::Classification => numcore::tape::sigmoid(v),
                            TaskKind::Regression => v * self.scale.std[k] + self.scale.mean[k],
                        })
                        .collect(),
                );
            }
        }
        Ok(out)
    }
}

fn gather(t: &Tensor, rows: &[usize]) -> Tensor {
    let data = rows.iter().flat_map(|&r| t.row_slice(r).iter().copied()).collect();
    Tensor::from_vec(rows.len(), t.cols(), data).expect("gathered shape")
}

/// Trains a predictor on the train split, keeps the parameters with the best
/// validation metric, stops after `patience` epochs without improvement,
/// and reports the test metric of the kept parameters. The model passed in
/// is never modified.
pub fn finetune(
    model: &Model,
    kg: &ElementKG,
    corpus: &LabeledCorpus,
    protocol: Protocol,
    encoder: EncoderKind,
    cfg: &DownstreamConfig,
) -> Result<FinetuneReport> {
    cfg.validate()?;
    if corpus.assignment.len() != corpus.len() {
        return Err(PipelineError::ConfigInvalid("corpus has not been split".into()));
    }
    let train = corpus.indices(Split::Train);
    let valid = corpus.indices(Split::Valid);
    let test = corpus.indices(Split::Test);
    for (name, ix) in [("train", &train), ("valid", &valid), ("test", &test)] {
        if ix.is_empty() {
            return Err(PipelineError::EmptySplit(name.into()));
        }
    }
    let augmented = match encoder {
        EncoderKind::Kmpnn => augment_all(&corpus.molecules, kg)?,
        EncoderKind::Gcn => Vec::new(),
    };
    let inputs = EncoderInputs { molecules: &corpus.molecules, augmented: &augmented };
    let tasks = corpus.tasks();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // The output layer starts at zero, so training begins from the
    // label-mean prediction.
    let mut params = match protocol {
        Protocol::Linear => {
            let mut p = ParameterSet::new();
            p.insert(format!("{PRED}.w"), Tensor::zeros(model.embedding_dim(), tasks))?;
            p.insert(format!("{PRED}.b"), Tensor::zeros(1, tasks))?;
            p
        }
        Protocol::FineTune => {
            let mut p = model.params.clone();
            p.reset_optimizer();
            init_linear(&mut p, &format!("{PRED}.l1"), model.embedding_dim(), cfg.hidden_size, &mut rng)?;
            p.insert(format!("{PRED}.l2.w"), Tensor::zeros(cfg.hidden_size, tasks))?;
            p.insert(format!("{PRED}.l2.b"), Tensor::zeros(1, tasks))?;
            p
        }
    };
    let frozen = match protocol {
        Protocol::Linear => Some(model.embed(encoder, &corpus.molecules, kg)?),
        Protocol::FineTune => None,
    };
    let trainer = Trainer {
        corpus,
        protocol,
        encoder,
        model,
        inputs,
        frozen,
        scale: TargetScale::fit(corpus, &train),
    };
    let adam = AdamConfig::with_lr(cfg.lr);

    let mut best: Option<(f64, f64, usize, ParameterSet)> = None;
    let mut train_losses = Vec::new();
    let mut order = train.clone();
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let (mut total, mut batches) = (0.0, 0usize);
        for members in order.chunks(cfg.batch_size) {
            let tape = Tape::new();
            let out = trainer.forward(&tape, &params, members)?;
            let (y, mask) = targets(corpus, &trainer.scale, members)?;
            let loss = masked_loss(out, y, mask, corpus.kind)?;
            total += loss.item();
            batches += 1;
            tape.backward_into(loss, &mut params)?;
            params.fill_missing_grads();
            params.adam_step(&adam)?;
        }
        train_losses.push(total / batches as f64);
        let vloss = validation_loss(&trainer, &params, &valid)?;
        let v = match score(corpus, &valid, &trainer.predict(&params, &valid)?) {
            Ok(v) => v,
            // a single-class validation split falls back to its loss
            Err(PipelineError::SingleClass) => -vloss,
            Err(e) => return Err(e),
        };
        if best.as_ref().is_none_or(|b| improves(corpus.kind, (v, vloss), (b.0, b.1))) {
            best = Some((v, vloss, epoch, params.clone()));
        }
        let best_epoch = best.as_ref().expect("set above").2;
        if epoch - best_epoch >= cfg.patience {
            break;
        }
    }
    let epochs_run = train_losses.len();
    let (valid_metric, _, best_epoch, best_params) = best.expect("at least one epoch");
    let test_predictions = trainer.predict(&best_params, &test)?;
    let test_metric = score(corpus, &test, &test_predictions)?;
    log::info!(
        "{} {} on {}: valid {valid_metric:.4}, test {test_metric:.4} (epoch {best_epoch}/{epochs_run})",
        protocol.name(),
        encoder.name(),
        corpus.name
    );
    Ok(FinetuneReport {
        protocol,
        encoder,
        metric: metric_name(corpus.kind),
        valid: valid_metric,
        test: test_metric,
        best_epoch,
        epochs_run,
        train_losses,
        test_predictions,
    })
}

fn validation_loss(trainer: &Trainer<'_>, params: &ParameterSet, members: &[usize]) -> Result<f64> {
    let tape = Tape::new();
    let out = trainer.forward(&tape, params, members)?;
    let (y, mask) = targets(trainer.corpus, &trainer.scale, members)?;
    Ok(masked_loss(out, y, mask, trainer.corpus.kind)?.item())
}
