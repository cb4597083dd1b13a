//! Synthetic labelled recordings.
//!
//! A stage sequence is drawn from a Markov chain. Each epoch of each channel
//! is the sum of the stage's spectral peaks plus white Gaussian noise. A peak
//! `(center_hz, bandwidth_hz, power)` is rendered as `components_per_peak`
//! sinusoids with random phase, frequency uniform in
//! `center ± bandwidth/2` and amplitude `sqrt(2·power/n)·(1 + jitter·u)`,
//! `u ~ U(−1, 1)`, so the expected peak power is `power`.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use super::recording::RecordingFile;
use crate::diffcore::rng::stream;
use crate::stage::{Stage, NUM_STAGES};
use crate::{Error, Result};

pub const SYNTHETIC_CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Peak {
    pub center_hz: f64,
    pub bandwidth_hz: f64,
    pub power: f64,
}

/// Peaks per channel for every stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageProfiles {
    #[serde(rename = "W")]
    pub w: Vec<Vec<Peak>>,
    #[serde(rename = "N1")]
    pub n1: Vec<Vec<Peak>>,
    #[serde(rename = "N2")]
    pub n2: Vec<Vec<Peak>>,
    #[serde(rename = "N3")]
    pub n3: Vec<Vec<Peak>>,
    #[serde(rename = "REM")]
    pub rem: Vec<Vec<Peak>>,
}

impl StageProfiles {
    pub fn get(&self, stage: Stage) -> &[Vec<Peak>] {
        match stage {
            Stage::W => &self.w,
            Stage::N1 => &self.n1,
            Stage::N2 => &self.n2,
            Stage::N3 => &self.n3,
            Stage::Rem => &self.rem,
        }
    }

    /// The same per-channel peaks for every stage.
    pub fn uniform(channels: Vec<Vec<Peak>>) -> Self {
        Self {
            w: channels.clone(),
            n1: channels.clone(),
            n2: channels.clone(),
            n3: channels.clone(),
            rem: channels,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub version: u32,
    pub sample_rate: f64,
    pub epoch_seconds: f64,
    pub channels: usize,
    pub recordings: usize,
    pub epochs_per_recording: usize,
    /// Variance of the additive white noise.
    pub noise_power: f64,
    pub amplitude_jitter: f64,
    pub components_per_peak: usize,
    /// First stage of every recording; drawn uniformly when absent.
    #[serde(default)]
    pub initial_stage: Option<Stage>,
    /// Row-stochastic, `transitions[from][to]`, stages in the order W, N1, N2, N3, REM.
    pub transitions: [[f64; NUM_STAGES]; NUM_STAGES],
    pub profiles: StageProfiles,
    pub seed: u64,
}

impl SyntheticConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn samples_per_epoch(&self) -> usize {
        (self.sample_rate * self.epoch_seconds).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.version != SYNTHETIC_CONFIG_VERSION {
            return bad(format!("unsupported synthetic config version {}", self.version));
        }
        if !(self.sample_rate > 0.0) || !(self.epoch_seconds > 0.0) || self.samples_per_epoch() == 0 {
            return bad("sample_rate and epoch_seconds must be positive".into());
        }
        if self.channels == 0 || self.components_per_peak == 0 {
            return bad("channels and components_per_peak must be positive".into());
        }
        if !(self.noise_power >= 0.0) || !(0.0..=1.0).contains(&self.amplitude_jitter) {
            return bad("noise_power must be >= 0 and amplitude_jitter in [0, 1]".into());
        }
        for (i, row) in self.transitions.iter().enumerate() {
            if row.iter().any(|p| !(*p >= 0.0)) {
                return bad(format!("transition row {i} has a negative entry"));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return bad(format!("transition row {i} sums to {s}, not 1"));
            }
        }
        let nyquist = self.sample_rate / 2.0;
        for stage in Stage::ALL {
            let chans = self.profiles.get(stage);
            if chans.len() != self.channels {
                return bad(format!(
                    "stage {stage} has peaks for {} channels, expected {}",
                    chans.len(),
                    self.channels
                ));
            }
            for peak in chans.iter().flatten() {
                let hi = peak.center_hz + peak.bandwidth_hz / 2.0;
                let lo = peak.center_hz - peak.bandwidth_hz / 2.0;
                if lo < 0.0 || hi >= nyquist || !(peak.bandwidth_hz >= 0.0) || !(peak.power >= 0.0) {
                    return bad(format!(
                        "stage {stage} peak {peak:?} must lie in [0, {nyquist}) Hz with non-negative power"
                    ));
                }
            }
        }
        Ok(())
    }
}

fn markov_chain<R: Rng + ?Sized>(cfg: &SyntheticConfig, rng: &mut R) -> Vec<Stage> {
    let n = cfg.epochs_per_recording;
    let mut out = Vec::with_capacity(n);
    if n == 0 {
        return out;
    }
    let mut s = cfg
        .initial_stage
        .unwrap_or_else(|| Stage::ALL[rng.random_range(0..NUM_STAGES)]);
    out.push(s);
    for _ in 1..n {
        let u: f64 = rng.random();
        let row = &cfg.transitions[s.index()];
        let mut acc = 0.0;
        // rounding can leave u just above the last cumulative sum
        let mut next = row.iter().rposition(|p| *p > 0.0).unwrap_or(s.index());
        for (j, p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                next = j;
                break;
            }
        }
        s = Stage::ALL[next];
        out.push(s);
    }
    out
}

/// Adds `a·sin(2πf·n/sr + φ)` for `n = 0..out.len()` using a rotation recurrence.
fn add_sinusoid(out: &mut [f64], amplitude: f64, freq: f64, phase: f64, sample_rate: f64) {
    let w = 2.0 * PI * freq / sample_rate;
    let (sw, cw) = w.sin_cos();
    let (mut s, mut c) = phase.sin_cos();
    for (i, v) in out.iter_mut().enumerate() {
        if i % 512 == 0 {
            (s, c) = (w * i as f64 + phase).sin_cos();
        }
        *v += amplitude * s;
        (s, c) = (s * cw + c * sw, c * cw - s * sw);
    }
}

/// Generates recording `index` of the corpus described by `cfg`.
pub fn generate_synthetic(cfg: &SyntheticConfig, index: usize) -> Result<RecordingFile> {
    cfg.validate()?;
    let mut rng = stream(cfg.seed, index as u64);
    let labels = markov_chain(cfg, &mut rng);
    let n = cfg.samples_per_epoch();
    let noise = Normal::new(0.0, cfg.noise_power.sqrt()).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let unit = Uniform::new_inclusive(-1.0, 1.0).expect("valid range");
    let mut samples = Vec::with_capacity(labels.len() * cfg.channels * n);
    let mut buf = vec![0.0f64; n];
    for stage in &labels {
        for peaks in cfg.profiles.get(*stage) {
            for v in buf.iter_mut() {
                *v = noise.sample(&mut rng);
            }
            for peak in peaks {
                let base = (2.0 * peak.power / cfg.components_per_peak as f64).sqrt();
                for _ in 0..cfg.components_per_peak {
                    let amp = base * (1.0 + cfg.amplitude_jitter * unit.sample(&mut rng));
                    let freq = peak.center_hz + peak.bandwidth_hz * (rng.random::<f64>() - 0.5);
                    let phase = 2.0 * PI * rng.random::<f64>();
                    add_sinusoid(&mut buf, amp, freq, phase, cfg.sample_rate);
                }
            }
            samples.extend(buf.iter().map(|&v| v as f32));
        }
    }
    Ok(RecordingFile {
        channels: cfg.channels,
        sample_rate: cfg.sample_rate,
        samples_per_epoch: n,
        samples,
        labels: Some(labels),
    })
}

pub fn generate_corpus(cfg: &SyntheticConfig) -> Result<Vec<(String, RecordingFile)>> {
    (0..cfg.recordings)
        .map(|i| Ok((recording_name(i), generate_synthetic(cfg, i)?)))
        .collect()
}

pub fn recording_name(index: usize) -> String {
    format!("rec_{index:03}")
}
