//! File formats, synthetic data, dataset splitting and the glue used by the CLI.

pub mod gradsuite;
pub mod recording;
pub mod synthetic;

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use recording::{read_recording, write_recording, RecordingFile};
pub use synthetic::{generate_corpus, generate_synthetic, Peak, StageProfiles, SyntheticConfig};

use crate::diffcore::rng::stream;
use crate::model::{ModelConfig, PreparedRecording};
use crate::tfr::{epoch_to_image, StftConfig};
use crate::{Error, Result};

pub const RECORDING_EXT: &str = "ssr";
pub const RUN_CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    /// Train, validation and test fractions.
    pub fractions: [f64; 3],
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            fractions: [0.8, 0.1, 0.1],
            seed: 0,
        }
    }
}

/// Everything `train` needs besides the data; stored inside checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub model: ModelConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub stft: StftConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        if cfg.version != RUN_CONFIG_VERSION {
            return Err(Error::InvalidConfig(format!("unsupported run config version {}", cfg.version)));
        }
        cfg.model.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub valid: Vec<T>,
    pub test: Vec<T>,
}

/// Shuffles whole recordings with a seeded RNG and cuts them into
/// `round(f·n)` training and validation items; the rest is the test set.
pub fn split_dataset<T: Clone>(items: &[T], fractions: [f64; 3], seed: u64) -> Result<Split<T>> {
    if fractions.iter().any(|f| !(*f >= 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!(
            "split fractions {fractions:?} must be non-negative and sum to 1"
        )));
    }
    let n = items.len();
    let n_train = ((fractions[0] * n as f64).round() as usize).min(n);
    let n_valid = ((fractions[1] * n as f64).round() as usize).min(n - n_train);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, 3));
    let pick = |idx: &[usize]| idx.iter().map(|&i| items[i].clone()).collect();
    Ok(Split {
        train: pick(&order[..n_train]),
        valid: pick(&order[n_train..n_train + n_valid]),
        test: pick(&order[n_train + n_valid..]),
    })
}

/// Converts every epoch to a time-frequency image.
pub fn prepare(name: &str, rec: &RecordingFile, stft: &StftConfig) -> Result<PreparedRecording> {
    let labels = rec
        .labels
        .clone()
        .ok_or_else(|| Error::Data(format!("recording {name} has no label sidecar")))?;
    let images = prepare_images(rec, stft)?;
    Ok(PreparedRecording {
        name: name.to_string(),
        images,
        labels,
    })
}

pub fn prepare_images(rec: &RecordingFile, stft: &StftConfig) -> Result<Vec<crate::tfr::TimeFrequencyImage>> {
    (0..rec.epoch_count())
        .map(|i| epoch_to_image(&rec.epoch(i), stft))
        .collect()
}

/// Recording files of a data directory, sorted by file name.
pub fn list_recordings(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == RECORDING_EXT));
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Data(format!(
            "no .{RECORDING_EXT} recordings in {}",
            dir.display()
        )));
    }
    Ok(paths)
}

pub fn recording_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Loads and prepares the recordings of one split of a data directory.
pub fn load_prepared(paths: &[PathBuf], stft: &StftConfig) -> Result<Vec<PreparedRecording>> {
    paths
        .iter()
        .map(|p| prepare(&recording_stem(p), &read_recording(p)?, stft))
        .collect()
}

/// Writes a synthetic corpus into `dir` together with the config that produced it.
pub fn write_corpus(cfg: &SyntheticConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut out = Vec::with_capacity(cfg.recordings);
    for i in 0..cfg.recordings {
        let path = dir.join(format!("{}.{RECORDING_EXT}", synthetic::recording_name(i)));
        write_recording(&path, &generate_synthetic(cfg, i)?)?;
        out.push(path);
    }
    fs::write(dir.join("synthetic.json"), serde_json::to_string_pretty(cfg)?)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn split_counts() {
        let items: Vec<usize> = (0..20).collect();
        let s = split_dataset(&items, [0.8, 0.1, 0.1], 9).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (16, 2, 2));
    }

    #[test]
    fn split_is_deterministic() {
        let items: Vec<usize> = (0..20).collect();
        assert_eq!(
            split_dataset(&items, [0.8, 0.1, 0.1], 4).unwrap(),
            split_dataset(&items, [0.8, 0.1, 0.1], 4).unwrap()
        );
    }

    #[test]
    fn split_is_a_partition() {
        for n in [0usize, 1, 3, 7, 20, 33] {
            let items: Vec<usize> = (0..n).collect();
            let s = split_dataset(&items, [0.6, 0.25, 0.15], n as u64).unwrap();
            let all: Vec<usize> = s.train.iter().chain(&s.valid).chain(&s.test).copied().collect();
            let set: HashSet<usize> = all.iter().copied().collect();
            assert_eq!(all.len(), n);
            assert_eq!(set.len(), n);
        }
    }

    #[test]
    fn split_rejects_bad_fractions() {
        assert!(split_dataset(&[1, 2], [0.5, 0.5, 0.5], 0).is_err());
    }

    #[test]
    fn run_config_round_trip() {
        let cfg = RunConfig {
            version: RUN_CONFIG_VERSION,
            model: ModelConfig::default(),
            split: SplitConfig::default(),
            stft: StftConfig::default(),
        };
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), cfg);
    }
}
