//! Channel-specific learnable filterbanks.
//!
//! A layer holds an unconstrained `[F×M]` matrix `W`; its effective weights are
//! `sigmoid(W) ⊙ T` where `T` is a fixed linear-frequency triangular matrix.
//! Non-negativity, band limits and frequency ordering therefore hold for any
//! value of `W`.

use ndarray::{s, Array2, ArrayView2};

use crate::diffcore::{Mat, ParamId, ParamKind, ParameterStore, Tape, Var};
use crate::{Error, Result};

/// Peak-normalized triangular filters evaluated at integer bins, `[F×M]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangularShapeMatrix {
    pub values: Mat,
    /// Continuous centers `c_1..c_M` in bin units.
    pub centers: Vec<f64>,
}

impl TriangularShapeMatrix {
    pub fn build(freq_bins: usize, filters: usize) -> Result<Self> {
        if filters == 0 || filters >= freq_bins {
            return Err(Error::InvalidConfig(format!(
                "filter count {filters} must satisfy 1 <= M < F = {freq_bins}"
            )));
        }
        let spacing = (freq_bins - 1) as f64 / (filters + 1) as f64;
        let edge = |j: usize| j as f64 * spacing;
        let mut values = Mat::zeros((freq_bins, filters));
        let mut centers = Vec::with_capacity(filters);
        for m in 0..filters {
            let (lo, mid, hi) = (edge(m), edge(m + 1), edge(m + 2));
            centers.push(mid);
            let mut col = values.column_mut(m);
            for (k, v) in col.iter_mut().enumerate() {
                let x = k as f64;
                *v = if x > lo && x <= mid {
                    (x - lo) / (mid - lo)
                } else if x > mid && x < hi {
                    (hi - x) / (hi - mid)
                } else {
                    0.0
                };
            }
            let centre_bin = mid.round() as usize;
            let peak = col[centre_bin];
            if peak > 0.0 {
                col.mapv_inplace(|v| (v / peak).min(1.0));
            } else {
                // support narrower than one bin: keep the center bin
                col[centre_bin] = 1.0;
            }
        }
        Ok(Self { values, centers })
    }

    pub fn freq_bins(&self) -> usize {
        self.values.nrows()
    }

    pub fn filters(&self) -> usize {
        self.values.ncols()
    }
}

#[derive(Debug, Clone)]
pub struct FilterbankLayer {
    pub raw_weights: ParamId,
    pub shape: TriangularShapeMatrix,
    pub channel_index: usize,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl FilterbankLayer {
    /// Registers a layer whose raw weights start at zero (effective weights `0.5·T`).
    pub fn new(store: &mut ParameterStore, channel_index: usize, freq_bins: usize, filters: usize) -> Result<Self> {
        let shape = TriangularShapeMatrix::build(freq_bins, filters)?;
        let raw_weights = store.add_zeros(
            format!("filterbank.{channel_index}.raw_weights"),
            freq_bins,
            filters,
            ParamKind::Weight,
        );
        Ok(Self {
            raw_weights,
            shape,
            channel_index,
        })
    }

    pub fn effective_weights(&self, store: &ParameterStore) -> Mat {
        store.value(self.raw_weights).mapv(sigmoid) * &self.shape.values
    }

    /// Records `cols · (sigmoid(W) ⊙ T)` for spectral columns stacked as rows of `cols` (`[N×F]`).
    pub fn apply_rows(&self, tape: &mut Tape, store: &ParameterStore, cols: Var) -> Result<Var> {
        let raw = tape.param(store, self.raw_weights);
        let gate = tape.sigmoid(raw);
        let tri = tape.constant(self.shape.values.clone());
        let w_fb = tape.mul(gate, tri)?;
        tape.matmul(cols, w_fb)
    }
}

/// `X_c = (sigmoid(W) ⊙ T)ᵀ · S_c`, `[M×T]` from an `[F×T]` image channel.
pub fn apply_filterbank(s_c: ArrayView2<f64>, layer: &FilterbankLayer, store: &ParameterStore) -> Result<Mat> {
    if s_c.nrows() != layer.shape.freq_bins() {
        return Err(Error::ShapeMismatch {
            op: "apply_filterbank",
            left: s_c.dim(),
            right: layer.shape.values.dim(),
        });
    }
    if s_c.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("filterbank input".into()));
    }
    let mut tape = Tape::new();
    let cols = tape.constant(s_c.t().to_owned());
    let out = layer.apply_rows(&mut tape, store, cols)?;
    Ok(tape.value(out).t().to_owned())
}

/// Filters each channel with its own layer and stacks the outputs along frequency: `[M·C × T]`.
pub fn filter_and_concat(
    image: &crate::tfr::TimeFrequencyImage,
    layers: &[FilterbankLayer],
    store: &ParameterStore,
) -> Result<Mat> {
    if layers.len() != image.channels() {
        return Err(Error::InvalidConfig(format!(
            "{} filterbank layers for {} channels",
            layers.len(),
            image.channels()
        )));
    }
    let m = layers.first().map_or(0, |l| l.shape.filters());
    let mut out = Array2::zeros((m * layers.len(), image.time_steps()));
    for (c, layer) in layers.iter().enumerate() {
        let x = apply_filterbank(image.channel(c), layer, store)?;
        out.slice_mut(s![c * m..(c + 1) * m, ..]).assign(&x);
    }
    Ok(out)
}
