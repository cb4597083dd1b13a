//! Log-power time-frequency images from raw epochs.
//!
//! Each channel is cut into Hamming-windowed frames, zero padded to `nfft`,
//! transformed with an iterative radix-2 FFT, and mapped to
//! `ln(|X[k]|² + EPS_FLOOR)` for bins `0..=nfft/2`.

use std::f64::consts::PI;

use ndarray::{s, Array2, Array3, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::{Error, Result, EPS_FLOOR};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StftConfig {
    pub win_seconds: f64,
    pub overlap_fraction: f64,
    pub nfft: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            win_seconds: 2.0,
            overlap_fraction: 0.5,
            nfft: 256,
        }
    }
}

/// Frame geometry resolved against a sample rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameLayout {
    pub win: usize,
    pub hop: usize,
    pub nfft: usize,
}

impl FrameLayout {
    pub fn freq_bins(&self) -> usize {
        self.nfft / 2 + 1
    }

    pub fn frames(&self, samples: usize) -> usize {
        if samples < self.win {
            0
        } else {
            (samples - self.win) / self.hop + 1
        }
    }
}

fn as_integer(x: f64, what: &str) -> Result<usize> {
    let r = x.round();
    if (x - r).abs() > 1e-9 || r < 1.0 {
        return Err(Error::InvalidConfig(format!("{what} = {x} is not a positive integer")));
    }
    Ok(r as usize)
}

impl StftConfig {
    pub fn layout(&self, sample_rate: f64) -> Result<FrameLayout> {
        let win = as_integer(self.win_seconds * sample_rate, "window length in samples")?;
        if !(0.0..1.0).contains(&self.overlap_fraction) {
            return Err(Error::InvalidConfig(format!(
                "overlap fraction {} outside [0, 1)",
                self.overlap_fraction
            )));
        }
        let hop = as_integer(win as f64 * (1.0 - self.overlap_fraction), "hop length")?;
        if !self.nfft.is_power_of_two() || self.nfft < win {
            return Err(Error::InvalidConfig(format!(
                "nfft {} must be a power of two no smaller than the window ({win})",
                self.nfft
            )));
        }
        Ok(FrameLayout {
            win,
            hop,
            nfft: self.nfft,
        })
    }
}

/// `0.54 - 0.46 cos(2πn / (win - 1))`.
pub fn hamming(win: usize) -> Vec<f64> {
    if win == 1 {
        return vec![1.0];
    }
    let denom = (win - 1) as f64;
    (0..win)
        .map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / denom).cos())
        .collect()
}

/// In-place iterative radix-2 FFT over split real/imaginary buffers.
pub fn fft_in_place(re: &mut [f64], im: &mut [f64]) {
    let n = re.len();
    assert_eq!(n, im.len());
    assert!(n.is_power_of_two(), "FFT length {n} is not a power of two");
    let bits = n.trailing_zeros();
    if bits == 0 {
        return;
    }
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let step = -2.0 * PI / len as f64;
        for k in 0..half {
            let (wi, wr) = (step * k as f64).sin_cos();
            for start in (0..n).step_by(len) {
                let (a, b) = (start + k, start + k + half);
                let tr = wr * re[b] - wi * im[b];
                let ti = wr * im[b] + wi * re[b];
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
            }
        }
        len <<= 1;
    }
}

/// Power spectrum `|X[k]|²`, `k = 0..=nfft/2`, of one frame zero padded to `nfft`.
pub fn power_spectrum(frame: &[f64], nfft: usize) -> Vec<f64> {
    let mut re = vec![0.0; nfft];
    let mut im = vec![0.0; nfft];
    re[..frame.len()].copy_from_slice(frame);
    fft_in_place(&mut re, &mut im);
    (0..=nfft / 2).map(|k| re[k] * re[k] + im[k] * im[k]).collect()
}

/// Log-power spectrogram of one channel, shaped `[F][T]`.
pub fn compute_log_spectrogram(signal: &[f64], sample_rate: f64, config: &StftConfig) -> Result<Array2<f64>> {
    let layout = config.layout(sample_rate)?;
    if signal.len() < layout.win {
        return Err(Error::EpochTooShort {
            samples: signal.len(),
            window: layout.win,
        });
    }
    if signal.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("spectrogram input signal".into()));
    }
    let window = hamming(layout.win);
    let frames = layout.frames(signal.len());
    let mut out = Array2::zeros((layout.freq_bins(), frames));
    let mut frame = vec![0.0; layout.win];
    for t in 0..frames {
        let start = t * layout.hop;
        for (f, (x, w)) in frame
            .iter_mut()
            .zip(signal[start..start + layout.win].iter().zip(&window))
        {
            *f = x * w;
        }
        for (k, p) in power_spectrum(&frame, layout.nfft).into_iter().enumerate() {
            out[[k, t]] = (p + EPS_FLOOR).ln();
        }
    }
    Ok(out)
}

/// One raw epoch: `samples[c]` holds channel `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochSignal {
    pub samples: Vec<Vec<f64>>,
    pub sample_rate: f64,
}

impl EpochSignal {
    pub fn channels(&self) -> usize {
        self.samples.len()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.first().map_or(0.0, |c| c.len() as f64) / self.sample_rate
    }
}

/// Multichannel log-power image `[F][T][C]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeFrequencyImage {
    pub values: Array3<f64>,
}

impl TimeFrequencyImage {
    pub fn freq_bins(&self) -> usize {
        self.values.dim().0
    }

    pub fn time_steps(&self) -> usize {
        self.values.dim().1
    }

    pub fn channels(&self) -> usize {
        self.values.dim().2
    }

    pub fn channel(&self, c: usize) -> ArrayView2<'_, f64> {
        self.values.slice(s![.., .., c])
    }
}

pub fn epoch_to_image(epoch: &EpochSignal, config: &StftConfig) -> Result<TimeFrequencyImage> {
    let first = epoch.samples.first().ok_or(Error::EmptySequence)?;
    for ch in &epoch.samples {
        if ch.len() != first.len() {
            return Err(Error::ShapeMismatch {
                op: "epoch_to_image",
                left: (1, first.len()),
                right: (1, ch.len()),
            });
        }
    }
    let spectra = epoch
        .samples
        .iter()
        .map(|ch| compute_log_spectrogram(ch, epoch.sample_rate, config))
        .collect::<Result<Vec<_>>>()?;
    let (f, t) = spectra[0].dim();
    let mut values = Array3::zeros((f, t, spectra.len()));
    for (c, spec) in spectra.iter().enumerate() {
        values.slice_mut(s![.., .., c]).assign(spec);
    }
    Ok(TimeFrequencyImage { values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    /// Direct O(n²) DFT power, independent of the FFT path.
    fn dft_power(frame: &[f64], nfft: usize) -> Vec<f64> {
        (0..=nfft / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (n, x) in frame.iter().enumerate() {
                    let phase = -2.0 * PI * (k * n) as f64 / nfft as f64;
                    re += x * phase.cos();
                    im += x * phase.sin();
                }
                re * re + im * im
            })
            .collect()
    }

    fn sine(freq: f64, n: usize, fs: f64) -> Vec<f64> {
        (0..n).map(|i| (2.0 * PI * freq * i as f64 / fs).sin()).collect()
    }

    #[test]
    fn default_configuration_shape() {
        let s = compute_log_spectrogram(&vec![0.1; 3000], 100.0, &StftConfig::default()).unwrap();
        assert_eq!(s.dim(), (129, 29));
    }

    #[test]
    fn zero_signal_hits_the_floor() {
        let s = compute_log_spectrogram(&vec![0.0; 3000], 100.0, &StftConfig::default()).unwrap();
        assert!(s.iter().all(|&v| v == EPS_FLOOR.ln()));
    }

    #[test]
    fn sine_peaks_at_expected_bin() {
        let s = compute_log_spectrogram(&sine(10.0, 3000, 100.0), 100.0, &StftConfig::default()).unwrap();
        let expected = (10.0f64 * 256.0 / 100.0).round() as usize;
        assert_eq!(expected, 26);
        for col in s.columns() {
            let argmax = col
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc })
                .0;
            assert_eq!(argmax, expected);
        }
    }

    #[test]
    fn fft_matches_direct_dft() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let window = hamming(200);
        for _ in 0..20 {
            let frame: Vec<f64> = window.iter().map(|w| w * rng.random_range(-1.0..1.0)).collect();
            let fast = power_spectrum(&frame, 256);
            let slow = dft_power(&frame, 256);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-9 * (1.0 + b.abs()), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn short_and_non_finite_inputs_are_rejected() {
        let cfg = StftConfig::default();
        assert!(matches!(
            compute_log_spectrogram(&[0.0; 150], 100.0, &cfg),
            Err(Error::EpochTooShort { samples: 150, window: 200 })
        ));
        let mut x = vec![0.0; 3000];
        x[17] = f64::NAN;
        assert!(matches!(compute_log_spectrogram(&x, 100.0, &cfg), Err(Error::NonFinite(_))));
    }

    #[test]
    fn image_stacks_channels() {
        let a = sine(3.0, 3000, 100.0);
        let b = sine(12.0, 3000, 100.0);
        let epoch = EpochSignal {
            samples: vec![a.clone(), b, a.clone()],
            sample_rate: 100.0,
        };
        let img = epoch_to_image(&epoch, &StftConfig::default()).unwrap();
        assert_eq!(img.values.dim(), (129, 29, 3));
        assert_eq!(img.channel(0), img.channel(2));
        let single = compute_log_spectrogram(&a, 100.0, &StftConfig::default()).unwrap();
        assert_eq!(img.channel(0), single.view());

        let bad = EpochSignal {
            samples: vec![vec![0.0; 3000], vec![0.0; 2999]],
            sample_rate: 100.0,
        };
        assert!(epoch_to_image(&bad, &StftConfig::default()).is_err());
    }

    proptest! {
        #[test]
        fn shape_law(n in 64usize..2000, win in 4usize..64, hop_div in 1usize..4, extra in 0u32..2) {
            let hop = (win / hop_div).max(1);
            let nfft = win.next_power_of_two() << extra;
            let cfg = StftConfig {
                win_seconds: win as f64 / 100.0,
                overlap_fraction: 1.0 - hop as f64 / win as f64,
                nfft,
            };
            let layout = cfg.layout(100.0).unwrap();
            prop_assume!(layout.hop == hop && n >= win);
            let s = compute_log_spectrogram(&vec![0.5; n], 100.0, &cfg).unwrap();
            prop_assert_eq!(s.dim(), (nfft / 2 + 1, (n - win) / hop + 1));
        }

        #[test]
        fn scaling_adds_two_log_k(seed in 0u64..1000, k in 1.1f64..20.0) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..600).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y: Vec<f64> = x.iter().map(|v| v * k).collect();
            let cfg = StftConfig::default();
            let sx = compute_log_spectrogram(&x, 100.0, &cfg).unwrap();
            let sy = compute_log_spectrogram(&y, 100.0, &cfg).unwrap();
            for (a, b) in sx.iter().zip(sy.iter()) {
                // cells whose pre-floor power dominates the floor by a wide margin
                if *a > EPS_FLOOR.ln() + 30.0 {
                    prop_assert!((b - a - 2.0 * k.ln()).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn deterministic() {
        let x = sine(7.3, 3000, 100.0);
        let a = compute_log_spectrogram(&x, 100.0, &StftConfig::default()).unwrap();
        let b = compute_log_spectrogram(&x, 100.0, &StftConfig::default()).unwrap();
        let bits = |m: &Array2<f64>| m.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }
}
