//! The full network: filterbanks → attention-pooled epoch-level BiGRU →
//! sequence-level BiGRU → per-step softmax, trained with the sequence loss.
//!
//! Data is folded between levels exactly as a batched implementation would:
//! a minibatch of `S` sequences of `L` epochs is unfolded into `S·L·T`
//! spectral columns for the filterbanks, refolded into `S·L` images for the
//! epoch-level recurrent layer and into `S` sequences of `L` attentional
//! vectors for the sequence-level layer. Epoch rows are ordered `l·S + s`.

mod train;

pub use train::{aggregated_accuracy, pool_statistics, train, LogRow, PreparedRecording, TrainOutcome, TrainingLog};

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{AttentionParams, ScorerKind};
use crate::diffcore::rng::stream;
use crate::diffcore::{dropout, linear, Mat, Mode, ParamId, ParamKind, ParameterStore, Tape, Var};
use crate::filterbank::FilterbankLayer;
use crate::recurrent::BiRnnParams;
use crate::stage::{Stage, NUM_STAGES};
use crate::tfr::TimeFrequencyImage;
use crate::{Error, Result, EPS_FLOOR};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub seq_len: usize,
    pub num_filters: usize,
    pub hidden_size: usize,
    pub attention_size: usize,
    pub channels: usize,
    pub freq_bins: usize,
    pub time_steps: usize,
    pub num_classes: usize,
    pub dropout_rate: f64,
    pub l2: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub train_epochs: usize,
    pub validate_every: usize,
    pub seed: u64,
    #[serde(default)]
    pub scorer: ScorerKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            seq_len: 20,
            num_filters: 32,
            hidden_size: 64,
            attention_size: 64,
            channels: 3,
            freq_bins: 129,
            time_steps: 29,
            num_classes: NUM_STAGES,
            dropout_rate: 0.25,
            l2: 1e-3,
            lr: 1e-4,
            batch_size: 32,
            train_epochs: 10,
            validate_every: 100,
            seed: 0,
            scorer: ScorerKind::TwoStage,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.seq_len == 0 {
            return bad("seq_len must be at least 1".into());
        }
        if self.num_classes != NUM_STAGES {
            return bad(format!("num_classes must be {NUM_STAGES}"));
        }
        if self.num_filters == 0 || self.num_filters >= self.freq_bins {
            return bad(format!(
                "num_filters {} must satisfy 1 <= M < F = {}",
                self.num_filters, self.freq_bins
            ));
        }
        if self.hidden_size == 0 || self.channels == 0 || self.time_steps == 0 {
            return bad("hidden_size, channels and time_steps must be positive".into());
        }
        if self.scorer == ScorerKind::TwoStage && self.attention_size == 0 {
            return bad("attention_size must be positive for the two-stage scorer".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        if self.batch_size == 0 || self.validate_every == 0 {
            return bad("batch_size and validate_every must be positive".into());
        }
        if !(self.lr > 0.0) || !(self.l2 >= 0.0) {
            return bad("lr must be positive and l2 non-negative".into());
        }
        Ok(())
    }

    /// Width of the attentional feature vector and of the sequence-level outputs.
    pub fn feature_size(&self) -> usize {
        2 * self.hidden_size
    }
}

/// Parameter handles of every layer.
#[derive(Debug, Clone)]
pub struct Architecture {
    pub filterbanks: Vec<FilterbankLayer>,
    pub epoch_rnn: BiRnnParams,
    pub attention: AttentionParams,
    pub seq_rnn: BiRnnParams,
    pub w_cls: ParamId,
    pub b_cls: ParamId,
}

impl Architecture {
    /// Registers all parameters. Weight matrices are Glorot-uniform, biases and
    /// filterbank raw weights zero.
    pub fn build<R: Rng + ?Sized>(cfg: &ModelConfig, store: &mut ParameterStore, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let filterbanks = (0..cfg.channels)
            .map(|c| FilterbankLayer::new(store, c, cfg.freq_bins, cfg.num_filters))
            .collect::<Result<Vec<_>>>()?;
        let d = cfg.feature_size();
        let epoch_rnn = BiRnnParams::new(
            store,
            "epoch_rnn",
            cfg.num_filters * cfg.channels,
            cfg.hidden_size,
            d,
            rng,
        );
        let attention = AttentionParams::new(store, "attention", d, cfg.attention_size, cfg.scorer, rng);
        let seq_rnn = BiRnnParams::new(store, "seq_rnn", d, cfg.hidden_size, d, rng);
        let w_cls = store.add_glorot("classifier.w", cfg.num_classes, d, rng);
        let b_cls = store.add_zeros("classifier.b", 1, cfg.num_classes, ParamKind::Bias);
        Ok(Self {
            filterbanks,
            epoch_rnn,
            attention,
            seq_rnn,
            w_cls,
            b_cls,
        })
    }

    fn check_image(&self, cfg: &ModelConfig, img: &TimeFrequencyImage) -> Result<()> {
        let want = (cfg.freq_bins, cfg.time_steps, cfg.channels);
        if img.values.dim() != want {
            let got = img.values.dim();
            return Err(Error::ShapeMismatch {
                op: "model input image",
                left: (got.0 * got.2, got.1),
                right: (want.0 * want.2, want.1),
            });
        }
        Ok(())
    }

    /// Attentional feature vectors `[B×2H]` and attention weights `[B×T]` for a set of images.
    pub fn epoch_features(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        cfg: &ModelConfig,
        images: &[&TimeFrequencyImage],
    ) -> Result<(Var, Var)> {
        let b = images.len();
        if b == 0 {
            return Err(Error::EmptySequence);
        }
        for img in images {
            self.check_image(cfg, img)?;
        }
        let (f, t) = (cfg.freq_bins, cfg.time_steps);
        // unfold: one row per spectral column, rows ordered t·B + b
        let mut per_channel = Vec::with_capacity(cfg.channels);
        for (c, layer) in self.filterbanks.iter().enumerate() {
            let mut cols = Mat::zeros((t * b, f));
            for (bi, img) in images.iter().enumerate() {
                let ch = img.channel(c);
                for ti in 0..t {
                    cols.row_mut(ti * b + bi).assign(&ch.column(ti));
                }
            }
            let cols = tape.constant(cols);
            per_channel.push(layer.apply_rows(tape, store, cols)?);
        }
        let x = tape.concat_cols(&per_channel)?;
        // fold: T steps over a batch of B images
        let a = self.epoch_rnn.run(tape, store, x, t, b)?;
        self.attention.pool(tape, store, a, t, b)
    }

    /// Per-step posteriors `[(L·S)×5]` from attentional features ordered `l·S + s`.
    #[allow(clippy::too_many_arguments)]
    pub fn sequence_head<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        cfg: &ModelConfig,
        features: Var,
        seq_len: usize,
        sequences: usize,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        let x = dropout(tape, features, cfg.dropout_rate, mode, rng)?;
        let o = self.seq_rnn.run(tape, store, x, seq_len, sequences)?;
        let o = dropout(tape, o, cfg.dropout_rate, mode, rng)?;
        let w = tape.param(store, self.w_cls);
        let bias = tape.param(store, self.b_cls);
        let logits = linear(tape, o, w, bias)?;
        Ok(tape.softmax(logits))
    }

    /// Full forward pass for `S` sequences of equal length. Returns posteriors `[(L·S)×5]`.
    pub fn forward_tape<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        cfg: &ModelConfig,
        sequences: &[Vec<&TimeFrequencyImage>],
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        let s = sequences.len();
        let l = sequences.first().ok_or(Error::EmptySequence)?.len();
        if l == 0 {
            return Err(Error::EmptySequence);
        }
        if let Some(bad) = sequences.iter().find(|q| q.len() != l) {
            return Err(Error::ShapeMismatch {
                op: "forward (mixed sequence lengths)",
                left: (l, 1),
                right: (bad.len(), 1),
            });
        }
        let images: Vec<&TimeFrequencyImage> = (0..l)
            .flat_map(|li| sequences.iter().map(move |q| q[li]))
            .collect();
        let (features, _) = self.epoch_features(tape, store, cfg, &images)?;
        self.sequence_head(tape, store, cfg, features, l, s, mode, rng)
    }

    /// Mean sequence loss over the minibatch plus `(λ/2)·Σ‖W‖²` over weight matrices.
    #[allow(clippy::too_many_arguments)]
    pub fn objective_tape<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        cfg: &ModelConfig,
        sequences: &[Vec<&TimeFrequencyImage>],
        labels: &[Vec<Stage>],
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        if labels.len() != sequences.len() || labels.iter().zip(sequences).any(|(y, q)| y.len() != q.len()) {
            return Err(Error::ShapeMismatch {
                op: "objective labels",
                left: (sequences.len(), sequences.first().map_or(0, Vec::len)),
                right: (labels.len(), labels.first().map_or(0, Vec::len)),
            });
        }
        let probs = self.forward_tape(tape, store, cfg, sequences, mode, rng)?;
        let (s, l) = (sequences.len(), sequences[0].len());
        let mut onehot = Mat::zeros((l * s, NUM_STAGES));
        for (si, ys) in labels.iter().enumerate() {
            for (li, y) in ys.iter().enumerate() {
                onehot[[li * s + si, y.index()]] = 1.0;
            }
        }
        let onehot = tape.constant(onehot);
        let logp = tape.log(probs, EPS_FLOOR);
        let picked = tape.mul(logp, onehot)?;
        let total = tape.sum(picked);
        let data = tape.scale(total, -1.0 / (s * l) as f64);
        if cfg.l2 == 0.0 {
            return Ok(data);
        }
        let mut reg = None;
        for (id, p) in store.iter() {
            if p.kind != ParamKind::Weight {
                continue;
            }
            let v = tape.param(store, id);
            let sq = tape.sum_of_squares(v);
            reg = Some(match reg {
                None => sq,
                Some(acc) => tape.add(acc, sq)?,
            });
        }
        match reg {
            Some(r) => {
                let r = tape.scale(r, cfg.l2 / 2.0);
                tape.add(data, r)
            }
            None => Ok(data),
        }
    }
}

/// A configured network with its parameters.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub arch: Architecture,
    pub params: ParameterStore,
}

const FEATURE_CHUNK: usize = 256;
const WINDOW_CHUNK: usize = 512;

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        let mut params = ParameterStore::new();
        let mut rng = stream(config.seed, 0);
        let arch = Architecture::build(&config, &mut params, &mut rng)?;
        Ok(Self { config, arch, params })
    }

    /// Rebuilds a model from a configuration and a store of named tensors.
    pub fn from_store(config: ModelConfig, loaded: &ParameterStore) -> Result<Self> {
        let mut model = Self::new(config)?;
        if loaded.len() != model.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                model.params.len(),
                loaded.len()
            )));
        }
        let ids: Vec<_> = model.params.ids().collect();
        for id in ids {
            let name = model.params.get(id).name.clone();
            let value = loaded.by_name(&name)?;
            if value.dim() != model.params.value(id).dim() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    value.dim(),
                    model.params.value(id).dim()
                )));
            }
            *model.params.value_mut(id) = value.clone();
        }
        Ok(model)
    }

    /// Posteriors `[L×5]` for each of `S` sequences.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        sequences: &[Vec<&TimeFrequencyImage>],
        mode: Mode,
        rng: &mut R,
    ) -> Result<Vec<Array2<f64>>> {
        let mut tape = Tape::new();
        let probs = self
            .arch
            .forward_tape(&mut tape, &self.params, &self.config, sequences, mode, rng)?;
        let p = tape.value(probs);
        let s = sequences.len();
        let l = sequences[0].len();
        Ok((0..s)
            .map(|si| Array2::from_shape_fn((l, NUM_STAGES), |(li, c)| p[[li * s + si, c]]))
            .collect())
    }

    /// Minibatch objective in evaluation mode (no dropout).
    pub fn objective(&self, sequences: &[Vec<&TimeFrequencyImage>], labels: &[Vec<Stage>]) -> Result<f64> {
        let mut tape = Tape::new();
        let mut rng = stream(0, 0);
        let loss = self.arch.objective_tape(
            &mut tape,
            &self.params,
            &self.config,
            sequences,
            labels,
            Mode::Eval,
            &mut rng,
        )?;
        tape.scalar(loss)
    }

    /// Attentional feature vectors of every image, computed in eval mode, `[N×2H]`.
    pub fn epoch_features(&self, images: &[TimeFrequencyImage]) -> Result<Array2<f64>> {
        let mut rows = Vec::with_capacity(images.len());
        for chunk in images.chunks(FEATURE_CHUNK) {
            let refs: Vec<&TimeFrequencyImage> = chunk.iter().collect();
            let mut tape = Tape::new();
            let (f, _) = self.arch.epoch_features(&mut tape, &self.params, &self.config, &refs)?;
            rows.push(tape.value(f).clone());
        }
        let views: Vec<_> = rows.iter().map(|m| m.view()).collect();
        Ok(ndarray::concatenate(ndarray::Axis(0), &views).map_err(|_| Error::EmptySequence)?)
    }

    /// Attention weights over the `T` spectral columns of one image.
    pub fn attention_weights(&self, image: &TimeFrequencyImage) -> Result<Array1<f64>> {
        let mut tape = Tape::new();
        let (_, alpha) = self
            .arch
            .epoch_features(&mut tape, &self.params, &self.config, &[image])?;
        Ok(tape.value(alpha).row(0).to_owned())
    }

    /// Eval-mode posteriors `[L×5]` of every stride-1 window of a recording.
    ///
    /// Epoch-level features do not depend on the window, so they are computed
    /// once per epoch and shared by the windows that contain it.
    pub fn window_posteriors(&self, images: &[TimeFrequencyImage]) -> Result<Vec<Array2<f64>>> {
        let l = self.config.seq_len;
        if images.len() < l {
            return Err(Error::RecordingTooShort {
                epochs: images.len(),
                seq_len: l,
            });
        }
        let feats = self.epoch_features(images)?;
        let d = feats.ncols();
        let n_windows = images.len() - l + 1;
        let mut out = Vec::with_capacity(n_windows);
        let mut rng = stream(0, 0);
        let mut start = 0;
        while start < n_windows {
            let s = WINDOW_CHUNK.min(n_windows - start);
            let mut x = Mat::zeros((l * s, d));
            for li in 0..l {
                for si in 0..s {
                    x.row_mut(li * s + si).assign(&feats.row(start + si + li));
                }
            }
            let mut tape = Tape::new();
            let xv = tape.constant(x);
            let probs =
                self.arch
                    .sequence_head(&mut tape, &self.params, &self.config, xv, l, s, Mode::Eval, &mut rng)?;
            let p = tape.value(probs);
            for si in 0..s {
                out.push(Array2::from_shape_fn((l, NUM_STAGES), |(li, c)| p[[li * s + si, c]]));
            }
            start += s;
        }
        Ok(out)
    }
}

/// `−(1/L) Σ_l y_l · ln max(ŷ_l, ε)` for one sequence; `truth` is one-hot `[L×5]`.
pub fn sequence_loss(pred: &Array2<f64>, truth: &Array2<f64>) -> Result<f64> {
    if pred.dim() != truth.dim() || pred.nrows() == 0 {
        return Err(Error::ShapeMismatch {
            op: "sequence_loss",
            left: pred.dim(),
            right: truth.dim(),
        });
    }
    let total: f64 = pred
        .iter()
        .zip(truth.iter())
        .map(|(p, y)| if *y == 0.0 { 0.0 } else { y * p.max(EPS_FLOOR).ln() })
        .sum();
    Ok(-total / pred.nrows() as f64)
}

pub fn one_hot(labels: &[Stage]) -> Array2<f64> {
    let mut m = Array2::zeros((labels.len(), NUM_STAGES));
    for (i, y) in labels.iter().enumerate() {
        m[[i, y.index()]] = 1.0;
    }
    m
}
