//! The gradient-check suite run by `seqsleep gradcheck` and the acceptance tests.

use ndarray::Array3;
use rand::Rng;

use crate::attention::{AttentionParams, ScorerKind};
use crate::diffcore::rng::{seeded, stream};
use crate::diffcore::{grad_check, GradCheckReport, Mat, Mode, ParamKind, ParameterStore};
use crate::filterbank::FilterbankLayer;
use crate::model::{Architecture, ModelConfig};
use crate::recurrent::{BiRnnParams, GruParams};
use crate::stage::Stage;
use crate::tfr::TimeFrequencyImage;
use crate::Result;

pub const SUITE_EPS: f64 = 1e-5;
pub const SUITE_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct SuiteEntry {
    pub name: &'static str,
    pub report: GradCheckReport,
}

/// F=9, T=5, M=4, H=3, A=3, C=2, L=3, with dropout left on.
pub fn micro_config() -> ModelConfig {
    ModelConfig {
        seq_len: 3,
        num_filters: 4,
        hidden_size: 3,
        attention_size: 3,
        channels: 2,
        freq_bins: 9,
        time_steps: 5,
        batch_size: 2,
        l2: 1e-3,
        dropout_rate: 0.25,
        seed: 11,
        ..ModelConfig::default()
    }
}

fn random_mat<R: Rng + ?Sized>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Mat {
    Mat::from_shape_simple_fn((rows, cols), || scale * rng.random_range(-1.0..1.0))
}

/// Overwrites every parameter with uniform noise in `±scale`.
pub fn randomize(store: &mut ParameterStore, scale: f64, seed: u64) {
    let mut rng = seeded(seed);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let (r, c) = store.value(id).dim();
        *store.value_mut(id) = random_mat(r, c, scale, &mut rng);
    }
}

pub fn random_image<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> TimeFrequencyImage {
    TimeFrequencyImage {
        values: Array3::from_shape_simple_fn((cfg.freq_bins, cfg.time_steps, cfg.channels), || {
            rng.random_range(-1.0..1.0)
        }),
    }
}

pub fn random_batch<R: Rng + ?Sized>(
    cfg: &ModelConfig,
    sequences: usize,
    rng: &mut R,
) -> (Vec<Vec<TimeFrequencyImage>>, Vec<Vec<Stage>>) {
    let images = (0..sequences)
        .map(|_| (0..cfg.seq_len).map(|_| random_image(cfg, rng)).collect())
        .collect();
    let labels = (0..sequences)
        .map(|_| (0..cfg.seq_len).map(|_| Stage::ALL[rng.random_range(0..5)]).collect())
        .collect();
    (images, labels)
}

fn probed_sum(tape: &mut crate::diffcore::Tape, y: crate::diffcore::Var, probe: &Mat) -> Result<crate::diffcore::Var> {
    let p = tape.constant(probe.clone());
    let prod = tape.mul(y, p)?;
    Ok(tape.sum(prod))
}

fn filterbank_check(seed: u64) -> Result<GradCheckReport> {
    let mut store = ParameterStore::new();
    let layer = FilterbankLayer::new(&mut store, 0, 9, 4)?;
    randomize(&mut store, 2.0, seed);
    let mut rng = stream(seed, 7);
    let cols = random_mat(10, 9, 1.0, &mut rng);
    let probe = random_mat(10, 4, 1.0, &mut rng);
    grad_check(
        &mut store,
        |tape, s| {
            let c = tape.constant(cols.clone());
            let y = layer.apply_rows(tape, s, c)?;
            let t = tape.tanh(y);
            probed_sum(tape, t, &probe)
        },
        SUITE_EPS,
        usize::MAX,
        seed,
    )
}

fn gru_cell_check(seed: u64) -> Result<GradCheckReport> {
    let mut store = ParameterStore::new();
    let p = GruParams::new(&mut store, "gru", 4, 3, &mut seeded(seed));
    let x = store.add("x", Mat::zeros((2, 4)), ParamKind::Bias);
    let h = store.add("h", Mat::zeros((2, 3)), ParamKind::Bias);
    randomize(&mut store, 1.0, seed);
    let probe = random_mat(2, 3, 1.0, &mut stream(seed, 7));
    grad_check(
        &mut store,
        |tape, s| {
            let xv = tape.param(s, x);
            let hv = tape.param(s, h);
            let y = p.step(tape, s, xv, hv)?;
            probed_sum(tape, y, &probe)
        },
        SUITE_EPS,
        usize::MAX,
        seed,
    )
}

fn bidirectional_check(seed: u64) -> Result<GradCheckReport> {
    let (k, b) = (5, 2);
    let mut store = ParameterStore::new();
    let p = BiRnnParams::new(&mut store, "bi", 3, 3, 4, &mut seeded(seed));
    let x = store.add("x", Mat::zeros((k * b, 3)), ParamKind::Bias);
    randomize(&mut store, 1.0, seed);
    let probe = random_mat(k * b, 4, 1.0, &mut stream(seed, 7));
    grad_check(
        &mut store,
        |tape, s| {
            let xv = tape.param(s, x);
            let y = p.run(tape, s, xv, k, b)?;
            probed_sum(tape, y, &probe)
        },
        SUITE_EPS,
        usize::MAX,
        seed,
    )
}

fn attention_check(seed: u64) -> Result<GradCheckReport> {
    let (t, b, d) = (5, 2, 4);
    let mut store = ParameterStore::new();
    let p = AttentionParams::new(&mut store, "att", d, 3, ScorerKind::TwoStage, &mut seeded(seed));
    let a = store.add("a", Mat::zeros((t * b, d)), ParamKind::Bias);
    randomize(&mut store, 1.5, seed);
    let mut rng = stream(seed, 7);
    let probe = random_mat(b, d, 1.0, &mut rng);
    let probe_alpha = random_mat(b, t, 1.0, &mut rng);
    grad_check(
        &mut store,
        |tape, s| {
            let av = tape.param(s, a);
            let (pooled, alpha) = p.pool(tape, s, av, t, b)?;
            let y1 = probed_sum(tape, pooled, &probe)?;
            let y2 = probed_sum(tape, alpha, &probe_alpha)?;
            tape.add(y1, y2)
        },
        SUITE_EPS,
        usize::MAX,
        seed,
    )
}

/// Objective of a model with configuration `cfg` on a random batch of `sequences`.
/// Dropout masks are redrawn from the same seed for every evaluation.
pub fn model_check(cfg: &ModelConfig, sequences: usize, budget: usize, seed: u64) -> Result<GradCheckReport> {
    let mut store = ParameterStore::new();
    let arch = Architecture::build(cfg, &mut store, &mut seeded(seed))?;
    randomize(&mut store, 0.5, seed);
    let (images, labels) = random_batch(cfg, sequences, &mut stream(seed, 7));
    let refs: Vec<Vec<&TimeFrequencyImage>> = images.iter().map(|q| q.iter().collect()).collect();
    grad_check(
        &mut store,
        |tape, s| {
            let mut rng = stream(seed, 2);
            arch.objective_tape(tape, s, cfg, &refs, &labels, Mode::Train, &mut rng)
        },
        SUITE_EPS,
        budget,
        seed,
    )
}

/// Runs checks (a)–(e); with `micro == false` the default-size model is checked too
/// on a subsample of its coordinates.
pub fn run_suite(micro: bool, seed: u64) -> Result<Vec<SuiteEntry>> {
    let mut out = vec![
        SuiteEntry {
            name: "filterbank layer",
            report: filterbank_check(seed)?,
        },
        SuiteEntry {
            name: "gru cell",
            report: gru_cell_check(seed)?,
        },
        SuiteEntry {
            name: "bidirectional pass k=5",
            report: bidirectional_check(seed)?,
        },
        SuiteEntry {
            name: "attention pool",
            report: attention_check(seed)?,
        },
        SuiteEntry {
            name: "micro model",
            report: model_check(&micro_config(), 2, usize::MAX, seed)?,
        },
    ];
    if !micro {
        let cfg = ModelConfig {
            seq_len: 2,
            ..ModelConfig::default()
        };
        out.push(SuiteEntry {
            name: "default-size model (subsampled)",
            report: model_check(&cfg, 2, 200, seed)?,
        });
    }
    Ok(out)
}
