//! Classifier training loop and evaluation passes.

mod checkpoint;
mod curves;

pub use checkpoint::{
    decode as decode_checkpoint, encode as encode_checkpoint, load_checkpoint, read_manifest, save_checkpoint,
    Manifest, ParamEntry, FORMAT_VERSION, MAGIC,
};
pub use curves::{CurveLog, EpochRecord, HEADER as CURVE_HEADER};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::data::{LabeledSet, Split};
use crate::error::{Error, Result};
use crate::models::{threshold, ModelGraph};
use crate::nn::{Mode, ParamStore};
use crate::optim::{bce_loss, bce_value, AdamConfig, AdamState};

/// Rows per forward pass during evaluation.
const EVAL_CHUNK: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if !(self.adam.lr >= 0.0) {
            return Err(Error::invalid(format!("learning rate must be non-negative, got {}", self.adam.lr)));
        }
        Ok(())
    }
}

/// Eval-mode scores, thresholded predictions and labels, in set order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub scores: Vec<f64>,
    pub predictions: Vec<u8>,
    pub labels: Vec<u8>,
}

impl Evaluation {
    pub fn accuracy(&self) -> f64 {
        let correct = self.predictions.iter().zip(&self.labels).filter(|(p, l)| p == l).count();
        correct as f64 / self.labels.len() as f64
    }

    pub fn loss(&self) -> Result<f64> {
        let labels: Vec<f64> = self.labels.iter().map(|&l| f64::from(l)).collect();
        bce_value(&self.scores, &labels)
    }
}

/// Runs the model in eval mode over `set`, `chunk` rows at a time.
pub fn evaluate_chunked(model: &ModelGraph, set: &LabeledSet, chunk: usize) -> Result<Evaluation> {
    if set.is_empty() {
        return Err(Error::Dataset("cannot evaluate an empty split".into()));
    }
    let chunk = chunk.max(1);
    let mut scores = Vec::with_capacity(set.len());
    let mut predictions = Vec::with_capacity(set.len());
    let rows: Vec<usize> = (0..set.len()).collect();
    for part in rows.chunks(chunk) {
        let p = model.predict(&set.inputs.select_rows(part)?)?;
        scores.extend(p.scores);
        predictions.extend(p.labels);
    }
    Ok(Evaluation {
        scores,
        predictions,
        labels: set.labels.clone(),
    })
}

pub fn evaluate(model: &ModelGraph, set: &LabeledSet) -> Result<Evaluation> {
    evaluate_chunked(model, set, EVAL_CHUNK)
}

/// Progress line for one split of one epoch.
pub fn progress_line(epoch: usize, split: Split, loss: f64, acc: f64) -> String {
    format!("epoch={epoch} split={split} loss={loss:.6} acc={acc:.6}")
}

/// Epoch-by-epoch classifier training with best-validation tracking.
pub struct Trainer {
    pub config: TrainConfig,
    pub optimizer: AdamState,
    pub curves: CurveLog,
    rng: ChaCha8Rng,
    best: Option<(usize, f64, ParamStore)>,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            optimizer: AdamState::new(config.adam),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            curves: CurveLog::default(),
            best: None,
            config,
        })
    }

    pub fn epochs_run(&self) -> usize {
        self.curves.len()
    }

    /// `(epoch, val_acc)` of the best validation accuracy so far; ties keep
    /// the earliest epoch.
    pub fn best(&self) -> Option<(usize, f64)> {
        self.best.as_ref().map(|(e, a, _)| (*e, *a))
    }

    /// One shuffled pass over `train` followed by an eval-mode pass over
    /// `val`. Training loss and accuracy are averaged over the minibatch
    /// forwards of the pass, in training mode.
    pub fn run_epoch(
        &mut self,
        model: &mut ModelGraph,
        train: &LabeledSet,
        val: &LabeledSet,
        log: &mut dyn FnMut(&str),
    ) -> Result<EpochRecord> {
        if !model.architecture.is_classifier() {
            return Err(Error::invalid(format!("cannot train {} as a classifier", model.tag())));
        }
        if train.is_empty() {
            return Err(Error::Dataset("empty training split".into()));
        }
        let epoch = self.curves.len() + 1;
        let record = self.epoch_inner(epoch, model, train, val, log).map_err(|e| match e {
            Error::NonFinite(op) => Error::Diverged {
                epoch,
                reason: format!("non-finite value in {op}"),
            },
            other => other,
        })?;
        if self.best.as_ref().is_none_or(|(_, acc, _)| record.val_acc > *acc) {
            self.best = Some((epoch, record.val_acc, model.params.clone()));
        }
        self.curves.push(record);
        Ok(record)
    }

    fn epoch_inner(
        &mut self,
        epoch: usize,
        model: &mut ModelGraph,
        train: &LabeledSet,
        val: &LabeledSet,
        log: &mut dyn FnMut(&str),
    ) -> Result<EpochRecord> {
        let diverged = |reason: String| Error::Diverged { epoch, reason };
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut self.rng);

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for rows in order.chunks(self.config.batch_size) {
            let batch = train.batch(rows)?;
            let mut tape = Tape::new();
            let x = tape.constant(batch.inputs)?;
            let out = model.forward(&mut tape, x, Mode::Train, true, true, &mut self.rng)?;
            correct += tape
                .data(out.output)
                .iter()
                .zip(&batch.labels)
                .filter(|(&s, &y)| threshold(f64::from(s)) == y as u8)
                .count();
            let loss = bce_loss(&mut tape, out.output, &batch.labels)?;
            let value = f64::from(tape.data(loss)[0]);
            if !value.is_finite() {
                return Err(diverged(format!("loss {value}")));
            }
            loss_sum += value * rows.len() as f64;
            tape.backward(loss)?;
            model.collect_grads(&tape, &out.bindings)?;
            self.optimizer.step(&mut model.params)?;
            model.apply_stat_updates(out.stat_updates);
        }
        let train_loss = loss_sum / train.len() as f64;
        let train_acc = correct as f64 / train.len() as f64;
        log(&progress_line(epoch, Split::Train, train_loss, train_acc));

        let eval = evaluate(model, val)?;
        let val_loss = eval.loss()?;
        let val_acc = eval.accuracy();
        if !val_loss.is_finite() {
            return Err(diverged(format!("validation loss {val_loss}")));
        }
        log(&progress_line(epoch, Split::Val, val_loss, val_acc));
        Ok(EpochRecord {
            epoch,
            train_loss,
            train_acc,
            val_loss,
            val_acc,
        })
    }

    /// Restores the parameters from the best validation epoch, if any.
    pub fn restore_best(&self, model: &mut ModelGraph) {
        if let Some((_, _, params)) = &self.best {
            model.params = params.clone();
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub curves: CurveLog,
    pub best_epoch: Option<usize>,
    pub best_val_acc: Option<f64>,
}

/// Trains for `config.epochs` epochs, then restores the parameters of the
/// epoch with the best validation accuracy.
pub fn train_classifier(
    model: &mut ModelGraph,
    train: &LabeledSet,
    val: &LabeledSet,
    config: &TrainConfig,
    log: &mut dyn FnMut(&str),
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(config.clone())?;
    for _ in 0..config.epochs {
        trainer.run_epoch(model, train, val, log)?;
    }
    trainer.restore_best(model);
    Ok(TrainOutcome {
        best_epoch: trainer.best().map(|b| b.0),
        best_val_acc: trainer.best().map(|b| b.1),
        curves: trainer.curves,
    })
}
