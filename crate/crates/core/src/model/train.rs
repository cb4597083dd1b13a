use std::fmt::Write as _;

use rand::seq::SliceRandom;

use super::{sequence_loss, one_hot, Model, ModelConfig};
use crate::diffcore::rng::stream;
use crate::diffcore::{AdamConfig, AdamState, Mode, Tape};
use crate::eval::sliding_predict;
use crate::stage::Stage;
use crate::tfr::TimeFrequencyImage;
use crate::{Error, Result};

/// A recording already converted to time-frequency images, with its labels.
#[derive(Debug, Clone)]
pub struct PreparedRecording {
    pub name: String,
    pub images: Vec<TimeFrequencyImage>,
    pub labels: Vec<Stage>,
}

impl PreparedRecording {
    /// Start indices of every stride-1 window of length `seq_len`.
    pub fn windows(&self, seq_len: usize) -> std::ops::Range<usize> {
        0..(self.images.len() + 1).saturating_sub(seq_len)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub train_loss: f64,
    pub validation_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub rows: Vec<LogRow>,
}

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,train_loss,validation_accuracy\n");
        for r in &self.rows {
            let acc = r.validation_accuracy.map(|a| format!("{a:.17e}")).unwrap_or_default();
            let _ = writeln!(out, "{},{:.17e},{}", r.step, r.train_loss, acc);
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the best validation accuracy (the final ones if there is no validation set).
    pub model: Model,
    pub log: TrainingLog,
    pub best_step: usize,
    pub best_valid_accuracy: Option<f64>,
}

/// Pooled aggregated accuracy of `model` over the given recordings.
pub fn aggregated_accuracy(model: &Model, recordings: &[PreparedRecording]) -> Result<f64> {
    let mut hits = 0usize;
    let mut total = 0usize;
    for rec in recordings {
        if rec.images.len() < model.config.seq_len {
            continue;
        }
        let pred = sliding_predict(&rec.images, model)?;
        hits += pred
            .hypnogram
            .iter()
            .zip(&rec.labels)
            .filter(|(p, y)| p == y)
            .count();
        total += rec.labels.len();
    }
    Ok(hits as f64 / total.max(1) as f64)
}

/// Mean eval-mode sequence loss and per-step accuracy over every training window.
pub fn pool_statistics(model: &Model, recordings: &[PreparedRecording]) -> Result<(f64, f64)> {
    let l = model.config.seq_len;
    let mut loss = 0.0;
    let mut windows = 0usize;
    let mut hits = 0usize;
    let mut steps = 0usize;
    for rec in recordings {
        if rec.images.len() < l {
            continue;
        }
        let posts = model.window_posteriors(&rec.images)?;
        for (i, p) in posts.iter().enumerate() {
            let truth = &rec.labels[i..i + l];
            loss += sequence_loss(p, &one_hot(truth))?;
            windows += 1;
            for (row, y) in p.rows().into_iter().zip(truth) {
                let pred = crate::eval::argmax(row.as_slice().expect("contiguous row"));
                hits += usize::from(pred == y.index());
                steps += 1;
            }
        }
    }
    if windows == 0 {
        return Err(Error::EmptySequence);
    }
    Ok((loss / windows as f64, hits as f64 / steps as f64))
}

/// Trains a fresh model on every stride-1 window of the training recordings.
pub fn train(
    config: &ModelConfig,
    train_set: &[PreparedRecording],
    valid_set: &[PreparedRecording],
) -> Result<TrainOutcome> {
    let mut model = Model::new(config.clone())?;
    let l = config.seq_len;
    let mut pool: Vec<(usize, usize)> = Vec::new();
    for (r, rec) in train_set.iter().enumerate() {
        if rec.images.len() != rec.labels.len() {
            return Err(Error::ShapeMismatch {
                op: "training recording",
                left: (rec.images.len(), 1),
                right: (rec.labels.len(), 1),
            });
        }
        if rec.images.len() < l {
            log::warn!(
                "skipping recording {}: {} epochs is shorter than the sequence length {l}",
                rec.name,
                rec.images.len()
            );
            continue;
        }
        pool.extend(rec.windows(l).map(|start| (r, start)));
    }
    if pool.is_empty() {
        return Err(Error::InvalidConfig(
            "no training recording is at least as long as the sequence length".into(),
        ));
    }
    let valid: Vec<PreparedRecording> = valid_set
        .iter()
        .filter(|rec| {
            let ok = rec.images.len() >= l;
            if !ok {
                log::warn!("skipping validation recording {}: shorter than {l} epochs", rec.name);
            }
            ok
        })
        .cloned()
        .collect();

    let mut adam = AdamState::new(
        &model.params,
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
    );
    let mut shuffle_rng = stream(config.seed, 1);
    let mut dropout_rng = stream(config.seed, 2);
    let steps_per_epoch = pool.len().div_ceil(config.batch_size);
    let total_steps = steps_per_epoch * config.train_epochs;

    let mut log = TrainingLog::default();
    let mut best: Option<(f64, usize, crate::diffcore::ParameterStore)> = None;
    let mut step = 0usize;
    for epoch in 0..config.train_epochs {
        pool.shuffle(&mut shuffle_rng);
        for batch in pool.chunks(config.batch_size) {
            let sequences: Vec<Vec<&TimeFrequencyImage>> = batch
                .iter()
                .map(|&(r, s)| train_set[r].images[s..s + l].iter().collect())
                .collect();
            let labels: Vec<Vec<Stage>> = batch
                .iter()
                .map(|&(r, s)| train_set[r].labels[s..s + l].to_vec())
                .collect();
            let mut tape = Tape::new();
            let loss = model.arch.objective_tape(
                &mut tape,
                &model.params,
                &model.config,
                &sequences,
                &labels,
                Mode::Train,
                &mut dropout_rng,
            )?;
            let value = tape.scalar(loss)?;
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("training loss at step {}", step + 1)));
            }
            let grads = tape.backward(loss)?.dense(&model.params);
            drop(tape);
            adam.step(&mut model.params, &grads)?;
            step += 1;

            let mut row = LogRow {
                step,
                train_loss: value,
                validation_accuracy: None,
            };
            if !valid.is_empty() && (step % config.validate_every == 0 || step == total_steps) {
                let acc = aggregated_accuracy(&model, &valid)?;
                log::info!("epoch {epoch} step {step}: loss {value:.5}, validation accuracy {acc:.4}");
                row.validation_accuracy = Some(acc);
                if best.as_ref().is_none_or(|(b, _, _)| acc > *b) {
                    best = Some((acc, step, model.params.clone()));
                }
            }
            log.rows.push(row);
        }
        log::debug!("finished training epoch {epoch}");
    }

    Ok(match best {
        Some((acc, best_step, params)) => TrainOutcome {
            model: Model {
                params,
                ..model
            },
            log,
            best_step,
            best_valid_accuracy: Some(acc),
        },
        None => TrainOutcome {
            model,
            log,
            best_step: step,
            best_valid_accuracy: None,
        },
    })
}
