//! Losses, the AdamW training loop, run configuration and checkpoints.

mod checkpoint;
mod config;
mod optim;

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub use checkpoint::{load_checkpoint, save_checkpoint, Manifest, MANIFEST_FILE, PARAMS_FILE};
pub use config::RunConfig;
pub use optim::{AdamW, Schedule};

use crate::data::{BatchBuilder, Example};
use crate::decoder::{decode, generation_loss, LOG_FLOOR};
use crate::encoding::{Batch, Targets};
use crate::error::{Error, Result};
use crate::metrics::{accuracy, corpus_subtoken_prf, Prf};
use crate::model::HiTModel;
use crate::nn::{Graph, Real, Tensor, Var};

/// Mean over the batch of `−ln max(P_target, ε)`.
pub fn classification_loss<T: Real>(g: &mut Graph<'_, T>, probs: Var, targets: &[usize]) -> Result<Var> {
    if targets.is_empty() {
        return Err(Error::EmptyInput);
    }
    let picked = g.pick(probs, targets.to_vec())?;
    let logs = g.log_floor(picked, LOG_FLOOR);
    let w = T::of(-1.0 / targets.len() as f64);
    g.weighted_sum(logs, vec![w; targets.len()])
}

/// Mean binary cross-entropy of probabilities against 0/1 labels.
pub fn scope_pair_loss<T: Real>(g: &mut Graph<'_, T>, probs: Var, labels: &[bool]) -> Result<Var> {
    if labels.is_empty() {
        return Err(Error::EmptyInput);
    }
    if g.value(probs).len() != labels.len() {
        return Err(Error::ShapeMismatch(format!("{} probabilities for {} labels", g.value(probs).len(), labels.len())));
    }
    let complement = g.affine(probs, -1.0, 1.0);
    let log_p = g.log_floor(probs, LOG_FLOOR);
    let log_q = g.log_floor(complement, LOG_FLOOR);
    let n = labels.len() as f64;
    let wp = labels.iter().map(|&y| T::of(if y { -1.0 / n } else { 0.0 })).collect();
    let wq = labels.iter().map(|&y| T::of(if y { 0.0 } else { -1.0 / n })).collect();
    let a = g.weighted_sum(log_p, wp)?;
    let b = g.weighted_sum(log_q, wq)?;
    g.add(a, b)
}

/// Scalar loss of one batch with targets.
pub fn batch_loss<T: Real>(model: &HiTModel<T>, g: &mut Graph<'_, T>, batch: &Batch) -> Result<Var> {
    let enc = model.encode(g, batch)?;
    match &batch.targets {
        Targets::Categories(labels) => {
            let probs = model.classify(g, enc.v)?;
            classification_loss(g, probs, labels)
        }
        Targets::Sequences { ids, lengths, max_len } => {
            let dec = model
                .decoder()
                .ok_or_else(|| Error::InvalidConfig("sequence targets need a decoder".into()))?;
            let probs = dec.teacher_forced(g, &enc, batch)?;
            generation_loss(g, probs, ids, lengths, *max_len)
        }
        Targets::None => Err(Error::EmptyTarget),
    }
}

/// Held-out predictions and their score.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Evaluation {
    Accuracy { accuracy: f64, predictions: Vec<usize> },
    Names { prf: Prf, predictions: Vec<Vec<String>> },
}

impl Evaluation {
    /// Accuracy, or subtoken F1 for generated names.
    pub fn metric(&self) -> f64 {
        match self {
            Evaluation::Accuracy { accuracy, .. } => *accuracy,
            Evaluation::Names { prf, .. } => prf.f1,
        }
    }
}

/// Scores `model` on `examples` with greedy decoding for names.
pub fn evaluate<T: Real>(
    model: &HiTModel<T>,
    builder: &BatchBuilder<'_>,
    examples: &[&Example],
    batch_size: usize,
) -> Result<Evaluation> {
    if examples.is_empty() {
        return Err(Error::EmptyInput);
    }
    if model.config.task.is_generation() {
        let targets = builder
            .vocabs
            .targets
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("name generation needs a target vocabulary".into()))?;
        let mut predictions = Vec::with_capacity(examples.len());
        for chunk in examples.chunks(batch_size.max(1)) {
            let batch = builder.build(chunk)?;
            predictions.extend(decode(model, &batch, targets, model.config.max_target_len + 1, 1)?);
        }
        let gold: Vec<&[String]> = examples.iter().map(|e| e.name.as_deref().unwrap_or_default()).collect();
        let prf = corpus_subtoken_prf(predictions.iter().map(Vec::as_slice).zip(gold));
        Ok(Evaluation::Names { prf, predictions })
    } else {
        let mut predictions = Vec::with_capacity(examples.len());
        for chunk in examples.chunks(batch_size.max(1)) {
            let batch = builder.build(chunk)?;
            predictions.extend(model.predict_probs(&batch)?.iter().map(|p| argmax(p)));
        }
        let gold: Vec<usize> = examples.iter().map(|e| e.label.unwrap_or(usize::MAX)).collect();
        Ok(Evaluation::Accuracy { accuracy: accuracy(&predictions, &gold)?, predictions })
    }
}

/// Index of the first maximum.
pub fn argmax<T: Real>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

/// One line of the training report.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_metric: f64,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters the model holds after [`fit`].
    pub best_epoch: Option<usize>,
    pub best_metric: Option<f64>,
}

pub const REPORT_COLUMNS: [&str; 4] = ["epoch", "train_loss", "valid_metric", "wall_seconds"];

/// Trains with AdamW and early stopping on the validation metric, then
/// restores the best parameters seen.
///
/// Epochs are numbered from 0. Without validation examples the metric is
/// the negated training loss. Each epoch appends one row to the CSV at
/// `report_path`. A non-finite loss restores the best parameters and fails
/// with [`Error::DivergedTraining`].
pub fn fit<T: Real>(
    model: &mut HiTModel<T>,
    builder: &BatchBuilder<'_>,
    train: &[&Example],
    valid: &[&Example],
    schedule: &Schedule,
    report_path: Option<&Path>,
) -> Result<TrainReport> {
    let mut csv = match report_path {
        Some(p) => {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_path(p)?;
            w.write_record(REPORT_COLUMNS)?;
            w.flush()?;
            Some(w)
        }
        None => None,
    };
    let mut report = TrainReport::default();
    if schedule.epochs == 0 {
        return Ok(report);
    }
    if train.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let mut opt = AdamW::new(schedule);
    let mut best: Option<(f64, usize, Vec<Tensor<T>>)> = None;
    let mut stale = 0;
    let mut order: Vec<&Example> = train.to_vec();
    for epoch in 0..schedule.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(schedule.batch_size.max(1)) {
            let batch = builder.build(chunk)?;
            let dropout_seed: u64 = rng.random();
            let (loss, mut grads) = {
                let mut g = Graph::training(&model.params, dropout_seed);
                let loss = batch_loss(model, &mut g, &batch)?;
                let value = g.value(loss).item().to_f64().unwrap_or(f64::NAN);
                if !value.is_finite() {
                    (value, None)
                } else {
                    (value, Some(g.backward(loss)?))
                }
            };
            let Some(grads) = grads.as_mut() else {
                restore(model, &best);
                return Err(Error::DivergedTraining { epoch });
            };
            if schedule.clip_norm > 0.0 {
                grads.clip_global_norm(T::of(schedule.clip_norm));
            }
            opt.step(&mut model.params, grads);
            loss_sum += loss * chunk.len() as f64;
        }
        let train_loss = loss_sum / order.len() as f64;
        model.mark_ready();
        let metric = if valid.is_empty() {
            -train_loss
        } else {
            evaluate(model, builder, valid, schedule.batch_size)?.metric()
        };
        let record = EpochRecord {
            epoch,
            train_loss,
            valid_metric: metric,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        if let Some(w) = csv.as_mut() {
            w.serialize(&record)?;
            w.flush()?;
        }
        report.epochs.push(record);
        if best.as_ref().is_none_or(|(m, _, _)| metric > *m) {
            best = Some((metric, epoch, snapshot(model)));
            stale = 0;
        } else {
            stale += 1;
            if stale >= schedule.patience.max(1) {
                break;
            }
        }
    }
    restore(model, &best);
    if let Some((metric, epoch, _)) = best {
        report.best_metric = Some(metric);
        report.best_epoch = Some(epoch);
    }
    Ok(report)
}

fn snapshot<T: Real>(model: &HiTModel<T>) -> Vec<Tensor<T>> {
    model.params.iter().map(|(_, _, t)| t.clone()).collect()
}

fn restore<T: Real>(model: &mut HiTModel<T>, best: &Option<(f64, usize, Vec<Tensor<T>>)>) {
    if let Some((_, _, tensors)) = best {
        let ids: Vec<_> = model.params.ids().collect();
        for (id, t) in ids.into_iter().zip(tensors) {
            *model.params.get_mut(id) = t.clone();
        }
    }
}
