use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::Mat;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Whether a tensor is a weight matrix (subject to L2 decay) or a bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    Weight,
    Bias,
}

#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Mat,
    pub kind: ParamKind,
}

/// Every trainable tensor of a model, addressed by [`ParamId`] and by name.
#[derive(Debug, Clone, Default)]
pub struct ParameterStore {
    entries: Vec<Parameter>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Mat, kind: ParamKind) -> ParamId {
        let name = name.into();
        assert!(
            self.find(&name).is_none(),
            "duplicate parameter name {name}"
        );
        self.entries.push(Parameter { name, value, kind });
        ParamId(self.entries.len() - 1)
    }

    /// Adds a weight matrix drawn uniformly from `[-s, s]`, `s = sqrt(6 / (fan_in + fan_out))`.
    pub fn add_glorot<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        rng: &mut R,
    ) -> ParamId {
        let s = (6.0 / (rows + cols) as f64).sqrt();
        let value = Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-s..=s));
        self.add(name, value, ParamKind::Weight)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize, kind: ParamKind) -> ParamId {
        self.add(name, Mat::zeros((rows, cols)), kind)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar coordinates.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|p| p.value.len()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.entries[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Mat {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.entries[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Result<&Mat> {
        self.find(name)
            .map(|id| self.value(id))
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.entries.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    /// Flat coordinate `k` resolved to (parameter, row-major offset).
    pub fn locate(&self, mut k: usize) -> Option<(ParamId, usize)> {
        for (i, p) in self.entries.iter().enumerate() {
            if k < p.value.len() {
                return Some((ParamId(i), k));
            }
            k -= p.value.len();
        }
        None
    }

    pub fn coord(&self, id: ParamId, offset: usize) -> f64 {
        let m = self.value(id);
        m[[offset / m.ncols(), offset % m.ncols()]]
    }

    pub fn set_coord(&mut self, id: ParamId, offset: usize, v: f64) {
        let m = self.value_mut(id);
        let c = m.ncols();
        m[[offset / c, offset % c]] = v;
    }

    /// `Σ ‖W‖²` over weight matrices only.
    pub fn weight_sq_norm(&self) -> f64 {
        self.entries
            .iter()
            .filter(|p| p.kind == ParamKind::Weight)
            .map(|p| p.value.iter().map(|v| v * v).sum::<f64>())
            .sum()
    }
}
