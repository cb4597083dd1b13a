//! Attention pooling of an epoch's recurrent outputs into one feature vector.
//!
//! Scores are `s_t = v · (P a_t)` with an `[A×D]` projection `P` and a learned
//! `[1×A]` vector `v` (the two-stage scorer), or `s_t = v · a_t` with `v` of
//! size `D` (the single-vector scorer). No bias, no nonlinearity. Weights are
//! `softmax(s)` and the pooled vector is `Σ_t α_t a_t`.

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Mat, ParamId, ParameterStore, Tape, Var};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    #[default]
    TwoStage,
    SingleVector,
}

#[derive(Debug, Clone)]
pub struct AttentionParams {
    pub projection: Option<ParamId>,
    pub vector: ParamId,
    pub input_size: usize,
}

impl AttentionParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParameterStore,
        prefix: &str,
        input_size: usize,
        attention_size: usize,
        kind: ScorerKind,
        rng: &mut R,
    ) -> Self {
        match kind {
            ScorerKind::TwoStage => Self {
                projection: Some(store.add_glorot(
                    format!("{prefix}.w_att"),
                    attention_size,
                    input_size,
                    rng,
                )),
                vector: store.add_glorot(format!("{prefix}.v_att"), 1, attention_size, rng),
                input_size,
            },
            ScorerKind::SingleVector => Self {
                projection: None,
                vector: store.add_glorot(format!("{prefix}.v_att"), 1, input_size, rng),
                input_size,
            },
        }
    }

    /// Scores for every row of `a_all`, `[N×1]`.
    pub fn scores(&self, tape: &mut Tape, store: &ParameterStore, a_all: Var) -> Result<Var> {
        let hidden = match self.projection {
            Some(p) => {
                let w = tape.param(store, p);
                tape.matmul_bt(a_all, w)?
            }
            None => a_all,
        };
        let v = tape.param(store, self.vector);
        tape.matmul_bt(hidden, v)
    }

    /// Pools `[(T·B)×D]` step-major rows; returns pooled `[B×D]` and weights `[B×T]`.
    pub fn pool(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        a_all: Var,
        steps: usize,
        batch: usize,
    ) -> Result<(Var, Var)> {
        if steps == 0 {
            return Err(Error::EmptySequence);
        }
        let (rows, d) = tape.shape(a_all);
        if rows != steps * batch || d != self.input_size {
            return Err(Error::ShapeMismatch {
                op: "attention_pool",
                left: (rows, d),
                right: (steps * batch, self.input_size),
            });
        }
        let s = self.scores(tape, store, a_all)?;
        let s = tape.reshape(s, steps, batch)?;
        let s = tape.transpose(s);
        let alpha = tape.softmax(s);
        let mut pooled = None;
        for t in 0..steps {
            let a_t = tape.slice_rows(a_all, t * batch, batch)?;
            let w_t = tape.slice_cols(alpha, t, 1)?;
            let term = tape.mul_col(a_t, w_t)?;
            pooled = Some(match pooled {
                None => term,
                Some(acc) => tape.add(acc, term)?,
            });
        }
        Ok((pooled.expect("steps > 0"), alpha))
    }
}

/// Pools one sequence of vectors. Returns `(ā, α)`.
pub fn attention_pool(
    a: &[Array1<f64>],
    p: &AttentionParams,
    store: &ParameterStore,
) -> Result<(Array1<f64>, Array1<f64>)> {
    let first = a.first().ok_or(Error::EmptySequence)?;
    let mut m = Array2::zeros((a.len(), first.len()));
    for (mut r, v) in m.rows_mut().into_iter().zip(a) {
        if v.len() != first.len() {
            return Err(Error::ShapeMismatch {
                op: "attention_pool",
                left: (1, first.len()),
                right: (1, v.len()),
            });
        }
        r.assign(v);
    }
    let mut tape = Tape::new();
    let av = tape.constant(m);
    let (pooled, alpha) = p.pool(&mut tape, store, av, a.len(), 1)?;
    let pooled: Mat = tape.value(pooled).clone();
    let alpha: Mat = tape.value(alpha).clone();
    Ok((pooled.row(0).to_owned(), alpha.row(0).to_owned()))
}
