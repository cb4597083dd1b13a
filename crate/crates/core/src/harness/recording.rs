//! Binary recording files.
//!
//! Layout (all little-endian):
//!
//! | offset | type  | field              |
//! |--------|-------|--------------------|
//! | 0      | [u8;4]| magic `SSR1`       |
//! | 4      | u32   | format version (1) |
//! | 8      | u32   | channels           |
//! | 12     | f64   | sample rate, Hz    |
//! | 20     | u32   | samples per epoch  |
//! | 24     | u32   | epoch count        |
//! | 28     | f32[] | samples, `[epoch][channel][sample]` |
//!
//! Labels live in a sidecar `<file>.labels` holding one byte per epoch.

use std::fs;
use std::path::{Path, PathBuf};

use crate::stage::Stage;
use crate::tfr::EpochSignal;
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SSR1";
pub const RECORDING_VERSION: u32 = 1;
const HEADER_LEN: usize = 28;

#[derive(Debug, Clone, PartialEq)]
pub struct RecordingFile {
    pub channels: usize,
    pub sample_rate: f64,
    pub samples_per_epoch: usize,
    /// `[epoch][channel][sample]`, flattened.
    pub samples: Vec<f32>,
    pub labels: Option<Vec<Stage>>,
}

impl RecordingFile {
    pub fn epoch_count(&self) -> usize {
        let per = self.channels * self.samples_per_epoch;
        if per == 0 {
            0
        } else {
            self.samples.len() / per
        }
    }

    pub fn epoch(&self, i: usize) -> EpochSignal {
        let n = self.samples_per_epoch;
        let base = i * self.channels * n;
        let samples = (0..self.channels)
            .map(|c| {
                self.samples[base + c * n..base + (c + 1) * n]
                    .iter()
                    .map(|&v| f64::from(v))
                    .collect()
            })
            .collect();
        EpochSignal {
            samples,
            sample_rate: self.sample_rate,
        }
    }
}

pub fn labels_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".labels");
    PathBuf::from(s)
}

fn u32_field(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Data(format!("{what} {v} does not fit the file header")))
}

pub fn encode(rec: &RecordingFile) -> Result<Vec<u8>> {
    let expected = rec.epoch_count() * rec.channels * rec.samples_per_epoch;
    if expected != rec.samples.len() {
        return Err(Error::Data(format!(
            "sample count {} is not a whole number of epochs",
            rec.samples.len()
        )));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * rec.samples.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&RECORDING_VERSION.to_le_bytes());
    out.extend_from_slice(&u32_field(rec.channels, "channel count")?.to_le_bytes());
    out.extend_from_slice(&rec.sample_rate.to_le_bytes());
    out.extend_from_slice(&u32_field(rec.samples_per_epoch, "samples per epoch")?.to_le_bytes());
    out.extend_from_slice(&u32_field(rec.epoch_count(), "epoch count")?.to_le_bytes());
    for v in &rec.samples {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<RecordingFile> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::TruncatedPayload {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let version = u32_at(4);
    if version != RECORDING_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let channels = u32_at(8) as usize;
    let sample_rate = f64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    let samples_per_epoch = u32_at(20) as usize;
    let epochs = u32_at(24) as usize;
    let count = epochs * channels * samples_per_epoch;
    let expected = HEADER_LEN + 4 * count;
    if bytes.len() < expected {
        return Err(Error::TruncatedPayload {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::Data(format!(
            "{} trailing bytes after the payload",
            bytes.len() - expected
        )));
    }
    let samples = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok(RecordingFile {
        channels,
        sample_rate,
        samples_per_epoch,
        samples,
        labels: None,
    })
}

pub fn decode_labels(bytes: &[u8], epochs: usize) -> Result<Vec<Stage>> {
    if bytes.len() != epochs {
        return Err(Error::LabelCount {
            expected: epochs,
            found: bytes.len(),
        });
    }
    bytes.iter().map(|&b| Stage::from_byte(b)).collect()
}

/// Writes the recording and, if it has labels, its sidecar.
pub fn write_recording(path: &Path, rec: &RecordingFile) -> Result<()> {
    fs::write(path, encode(rec)?)?;
    if let Some(labels) = &rec.labels {
        if labels.len() != rec.epoch_count() {
            return Err(Error::LabelCount {
                expected: rec.epoch_count(),
                found: labels.len(),
            });
        }
        let bytes: Vec<u8> = labels.iter().map(|s| s.index() as u8).collect();
        fs::write(labels_path(path), bytes)?;
    }
    Ok(())
}

/// Reads a recording; labels are loaded when the sidecar exists.
pub fn read_recording(path: &Path) -> Result<RecordingFile> {
    let mut rec = decode(&fs::read(path)?)?;
    let lp = labels_path(path);
    if lp.exists() {
        rec.labels = Some(decode_labels(&fs::read(lp)?, rec.epoch_count())?);
    }
    Ok(rec)
}
