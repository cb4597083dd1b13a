//! Straight-line reference implementation of the network, one image and one
//! sequence at a time, written with plain loops over named parameters.

#![allow(dead_code)]

use seqsleep::filterbank::TriangularShapeMatrix;
use seqsleep::model::Model;
use seqsleep::tfr::TimeFrequencyImage;

type V = Vec<f64>;

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

struct Named<'a>(&'a Model);

impl Named<'_> {
    fn m(&self, name: &str) -> Vec<V> {
        let v = self.0.params.by_name(name).unwrap_or_else(|_| panic!("missing {name}"));
        v.rows().into_iter().map(|r| r.to_vec()).collect()
    }

    fn v(&self, name: &str) -> V {
        self.m(name).remove(0)
    }
}

/// `W x + b` with `W` stored `[out][in]`.
fn affine(w: &[V], x: &[f64], b: &[f64]) -> V {
    w.iter()
        .zip(b)
        .map(|(row, bi)| bi + row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>())
        .collect()
}

fn matvec(w: &[V], x: &[f64]) -> V {
    let zero = vec![0.0; w.len()];
    affine(w, x, &zero)
}

fn gru(p: &Named, prefix: &str, xs: &[V], reverse: bool) -> Vec<V> {
    let g = |s: &str| p.m(&format!("{prefix}.{s}"));
    let b = |s: &str| p.v(&format!("{prefix}.{s}"));
    let (w_sr, w_sz, w_sh, w_hr, w_hz, w_hh) = (g("w_sr"), g("w_sz"), g("w_sh"), g("w_hr"), g("w_hz"), g("w_hh"));
    let (b_r, b_z, b_h) = (b("b_r"), b("b_z"), b("b_h"));
    let hsize = b_r.len();
    let mut h = vec![0.0; hsize];
    let mut out = vec![Vec::new(); xs.len()];
    let order: Vec<usize> = if reverse {
        (0..xs.len()).rev().collect()
    } else {
        (0..xs.len()).collect()
    };
    for t in order {
        let x = &xs[t];
        let r: V = affine(&w_sr, x, &b_r)
            .iter()
            .zip(matvec(&w_hr, &h))
            .map(|(a, c)| sig(a + c))
            .collect();
        let z: V = affine(&w_sz, x, &b_z)
            .iter()
            .zip(matvec(&w_hz, &h))
            .map(|(a, c)| sig(a + c))
            .collect();
        let rh: V = r.iter().zip(&h).map(|(a, c)| a * c).collect();
        let cand: V = affine(&w_sh, x, &b_h)
            .iter()
            .zip(matvec(&w_hh, &rh))
            .map(|(a, c)| (a + c).tanh())
            .collect();
        h = (0..hsize).map(|i| z[i] * h[i] + (1.0 - z[i]) * cand[i]).collect();
        out[t] = h.clone();
    }
    out
}

fn birnn(p: &Named, prefix: &str, xs: &[V]) -> Vec<V> {
    let hf = gru(p, &format!("{prefix}.fwd"), xs, false);
    let hb = gru(p, &format!("{prefix}.bwd"), xs, true);
    let w = p.m(&format!("{prefix}.w_out"));
    let b = p.v(&format!("{prefix}.b_out"));
    (0..xs.len())
        .map(|t| {
            let both: V = hb[t].iter().chain(&hf[t]).copied().collect();
            affine(&w, &both, &b)
        })
        .collect()
}

fn softmax(s: &[f64]) -> V {
    let m = s.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e: V = s.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

/// Attentional feature vector of one image and its attention weights.
pub fn epoch_feature(model: &Model, img: &TimeFrequencyImage) -> (V, V) {
    let p = Named(model);
    let cfg = &model.config;
    let (f, t, c) = img.values.dim();
    let shape = TriangularShapeMatrix::build(f, cfg.num_filters).unwrap().values;
    let mut cols: Vec<V> = vec![Vec::new(); t];
    for ch in 0..c {
        let raw = p.m(&format!("filterbank.{ch}.raw_weights"));
        for (ti, col) in cols.iter_mut().enumerate() {
            for m in 0..cfg.num_filters {
                let mut acc = 0.0;
                for k in 0..f {
                    acc += sig(raw[k][m]) * shape[[k, m]] * img.values[[k, ti, ch]];
                }
                col.push(acc);
            }
        }
    }
    let a = birnn(&p, "epoch_rnn", &cols);
    let scores: V = match model.params.find("attention.w_att") {
        Some(_) => {
            let w = p.m("attention.w_att");
            let v = p.v("attention.v_att");
            a.iter()
                .map(|at| matvec(&w, at).iter().zip(&v).map(|(x, y)| x * y).sum())
                .collect()
        }
        None => {
            let v = p.v("attention.v_att");
            a.iter().map(|at| at.iter().zip(&v).map(|(x, y)| x * y).sum()).collect()
        }
    };
    let alpha = softmax(&scores);
    let d = a[0].len();
    let pooled = (0..d).map(|j| (0..t).map(|ti| alpha[ti] * a[ti][j]).sum()).collect();
    (pooled, alpha)
}

/// Posteriors `[L][5]` of one sequence in evaluation mode.
pub fn sequence_posteriors(model: &Model, seq: &[&TimeFrequencyImage]) -> Vec<V> {
    let p = Named(model);
    let feats: Vec<V> = seq.iter().map(|img| epoch_feature(model, img).0).collect();
    let o = birnn(&p, "seq_rnn", &feats);
    let w = p.m("classifier.w");
    let b = p.v("classifier.b");
    o.iter().map(|ol| softmax(&affine(&w, ol, &b))).collect()
}
