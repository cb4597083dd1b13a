//! Decision-ensemble aggregation over overlapping windows and the metric suite.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::model::Model;
use crate::stage::{Stage, NUM_STAGES};
use crate::tfr::TimeFrequencyImage;
use crate::{Error, Result, EPS_FLOOR};

pub type Posterior = [f64; NUM_STAGES];

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in scores.iter().enumerate().skip(1) {
        if v > scores[best] {
            best = i;
        }
    }
    best
}

/// Fuses the posteriors covering one epoch: `log_scores[y] = (1/K) Σ_i ln max(P_i(y), ε)`.
pub fn aggregate(members: &[Posterior]) -> Result<(Posterior, Stage)> {
    if members.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let k = members.len() as f64;
    let mut log_scores = [0.0; NUM_STAGES];
    for p in members {
        for (acc, &v) in log_scores.iter_mut().zip(p) {
            *acc += v.max(EPS_FLOOR).ln();
        }
    }
    for v in &mut log_scores {
        *v /= k;
    }
    let label = Stage::from_index(argmax(&log_scores))?;
    Ok((log_scores, label))
}

#[derive(Debug, Clone)]
pub struct SlidingPrediction {
    pub hypnogram: Vec<Stage>,
    /// `[N×5]` aggregated log scores.
    pub log_scores: Array2<f64>,
    /// Number of windows covering each epoch.
    pub ensemble_sizes: Vec<usize>,
    /// Posteriors of every stride-1 window, `[L×5]` each, in window order.
    pub window_posteriors: Vec<Array2<f64>>,
}

impl SlidingPrediction {
    /// Accuracy of taking each window's own argmax at every position it covers,
    /// averaged over all (window, position) pairs.
    pub fn per_window_accuracy(&self, reference: &[Stage]) -> f64 {
        let mut hits = 0usize;
        let mut total = 0usize;
        for (i, post) in self.window_posteriors.iter().enumerate() {
            for (l, row) in post.rows().into_iter().enumerate() {
                let pred = argmax(row.as_slice().expect("contiguous row"));
                hits += usize::from(pred == reference[i + l].index());
                total += 1;
            }
        }
        hits as f64 / total.max(1) as f64
    }
}

/// Builds the ensemble of every epoch from stride-1 window posteriors and aggregates it.
pub fn aggregate_windows(window_posteriors: Vec<Array2<f64>>, epochs: usize) -> Result<SlidingPrediction> {
    let mut ensembles: Vec<Vec<Posterior>> = vec![Vec::new(); epochs];
    for (i, post) in window_posteriors.iter().enumerate() {
        for (l, row) in post.rows().into_iter().enumerate() {
            let mut p = [0.0; NUM_STAGES];
            for (dst, src) in p.iter_mut().zip(row.iter()) {
                *dst = *src;
            }
            ensembles
                .get_mut(i + l)
                .ok_or(Error::EmptyEnsemble)?
                .push(p);
        }
    }
    let mut log_scores = Array2::zeros((epochs, NUM_STAGES));
    let mut hypnogram = Vec::with_capacity(epochs);
    for (t, members) in ensembles.iter().enumerate() {
        let (scores, label) = aggregate(members)?;
        for (c, v) in scores.iter().enumerate() {
            log_scores[[t, c]] = *v;
        }
        hypnogram.push(label);
    }
    Ok(SlidingPrediction {
        hypnogram,
        log_scores,
        ensemble_sizes: ensembles.iter().map(Vec::len).collect(),
        window_posteriors,
    })
}

/// Runs the model on every length-L window of a recording (stride 1) and
/// aggregates the overlapping decisions per epoch.
pub fn sliding_predict(images: &[TimeFrequencyImage], model: &Model) -> Result<SlidingPrediction> {
    let seq_len = model.config.seq_len;
    if images.len() < seq_len {
        return Err(Error::RecordingTooShort {
            epochs: images.len(),
            seq_len,
        });
    }
    let windows = model.window_posteriors(images)?;
    aggregate_windows(windows, images.len())
}

/// Rows are reference stages, columns predicted stages.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_STAGES]; NUM_STAGES],
}

impl ConfusionMatrix {
    pub fn from_pairs(reference: &[Stage], predicted: &[Stage]) -> Result<Self> {
        if reference.len() != predicted.len() {
            return Err(Error::ShapeMismatch {
                op: "confusion_matrix",
                left: (reference.len(), 1),
                right: (predicted.len(), 1),
            });
        }
        let mut cm = Self::default();
        for (r, p) in reference.iter().zip(predicted) {
            cm.counts[r.index()][p.index()] += 1;
        }
        Ok(cm)
    }

    pub fn add(&mut self, other: &ConfusionMatrix) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("reference");
        for s in Stage::ALL {
            out.push(',');
            out.push_str(s.name());
        }
        out.push('\n');
        for (s, row) in Stage::ALL.iter().zip(&self.counts) {
            out.push_str(s.name());
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub kappa: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub classes: Vec<String>,
    pub per_class_sensitivity: Vec<f64>,
    pub per_class_selectivity: Vec<f64>,
    pub per_class_specificity: Vec<f64>,
    pub per_class_f1: Vec<f64>,
    /// Classes absent from both reference and prediction; their F1 is reported as 0.
    pub absent_classes: Vec<String>,
    pub total: u64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Accuracy, macro F1, Cohen's kappa, macro one-vs-rest sensitivity and
/// specificity, and class-wise sensitivity (recall) and selectivity (precision).
/// Macro averages run over all five stages.
pub fn compute_metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    let n = cm.total() as f64;
    if n == 0.0 {
        return Err(Error::InvalidConfig("confusion matrix is empty".into()));
    }
    let k = NUM_STAGES;
    let row = |i: usize| cm.counts[i].iter().sum::<u64>() as f64;
    let col = |j: usize| (0..k).map(|i| cm.counts[i][j]).sum::<u64>() as f64;
    let trace: f64 = (0..k).map(|i| cm.counts[i][i] as f64).sum();

    let mut sens = Vec::with_capacity(k);
    let mut sel = Vec::with_capacity(k);
    let mut spec = Vec::with_capacity(k);
    let mut f1 = Vec::with_capacity(k);
    let mut absent = Vec::new();
    for (c, stage) in Stage::ALL.iter().enumerate() {
        let tp = cm.counts[c][c] as f64;
        let (r, p) = (row(c), col(c));
        let fn_ = r - tp;
        let fp = p - tp;
        let tn = n - tp - fn_ - fp;
        let recall = ratio(tp, r);
        let precision = ratio(tp, p);
        sens.push(recall);
        sel.push(precision);
        spec.push(ratio(tn, tn + fp));
        f1.push(ratio(2.0 * precision * recall, precision + recall));
        if r == 0.0 && p == 0.0 {
            absent.push(stage.name().to_string());
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;

    let p_o = trace / n;
    let p_e: f64 = (0..k).map(|c| row(c) * col(c)).sum::<f64>() / (n * n);
    let kappa = if (1.0 - p_e).abs() > 0.0 {
        (p_o - p_e) / (1.0 - p_e)
    } else if p_o == 1.0 {
        1.0
    } else {
        0.0
    };

    Ok(Metrics {
        accuracy: p_o,
        macro_f1: mean(&f1),
        kappa,
        sensitivity: mean(&sens),
        specificity: mean(&spec),
        classes: Stage::ALL.iter().map(|s| s.name().to_string()).collect(),
        per_class_sensitivity: sens,
        per_class_selectivity: sel,
        per_class_specificity: spec,
        per_class_f1: f1,
        absent_classes: absent,
        total: cm.total(),
    })
}

/// `true` for epochs whose label differs from a neighbour's.
pub fn transition_split(reference: &[Stage]) -> Vec<bool> {
    let n = reference.len();
    (0..n)
        .map(|t| {
            (t > 0 && reference[t - 1] != reference[t]) || (t + 1 < n && reference[t + 1] != reference[t])
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionReport {
    pub transitioning: usize,
    pub non_transitioning: usize,
    pub transitioning_error_rate: Option<f64>,
    pub non_transitioning_error_rate: Option<f64>,
}

pub fn transition_errors(reference: &[Stage], predicted: &[Stage]) -> Result<TransitionReport> {
    if reference.len() != predicted.len() {
        return Err(Error::ShapeMismatch {
            op: "transition_errors",
            left: (reference.len(), 1),
            right: (predicted.len(), 1),
        });
    }
    let flags = transition_split(reference);
    let mut count = [0usize; 2];
    let mut errors = [0usize; 2];
    for ((f, r), p) in flags.iter().zip(reference).zip(predicted) {
        let g = usize::from(*f);
        count[g] += 1;
        errors[g] += usize::from(r != p);
    }
    let rate = |g: usize| (count[g] > 0).then(|| errors[g] as f64 / count[g] as f64);
    Ok(TransitionReport {
        transitioning: count[1],
        non_transitioning: count[0],
        transitioning_error_rate: rate(1),
        non_transitioning_error_rate: rate(0),
    })
}
