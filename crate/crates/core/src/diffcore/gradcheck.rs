use rand::seq::index::sample;

use super::params::ParameterStore;
use super::rng::seeded;
use super::tape::{Tape, Var};
use crate::{Error, Result};

/// Smallest subsample used when a model has more coordinates than the budget.
pub const MIN_SUBSAMPLE: usize = 200;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
    /// Parameter name and row-major offset of the worst coordinate.
    pub worst: Option<(String, usize)>,
}

fn eval<F>(f: &mut F, store: &ParameterStore) -> Result<f64>
where
    F: FnMut(&mut Tape, &ParameterStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    let value = tape.scalar(loss)?;
    if !value.is_finite() {
        return Err(Error::NonFinite("grad_check objective".into()));
    }
    Ok(value)
}

/// Compares reverse-mode gradients of `f` with central differences.
///
/// `f` records a scalar loss on the given tape from the parameters in `store`.
/// Every coordinate is checked when the store holds at most `budget` scalars,
/// otherwise a seeded random subsample of `max(budget, 200)` coordinates. The
/// returned error is `max |g_a - g_n| / max(1e-8, |g_a| + |g_n|)`.
pub fn grad_check<F>(
    store: &mut ParameterStore,
    mut f: F,
    eps: f64,
    budget: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &ParameterStore) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::InvalidConfig(format!(
            "grad_check eps {eps} outside [1e-7, 1e-3]"
        )));
    }
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    if !tape.scalar(loss)?.is_finite() {
        return Err(Error::NonFinite("grad_check objective".into()));
    }
    let grads = tape.backward(loss)?.dense(store);
    drop(tape);

    let total = store.num_scalars();
    let coords: Vec<usize> = if total <= budget {
        (0..total).collect()
    } else {
        let mut rng = seeded(seed);
        let mut picked = sample(&mut rng, total, budget.max(MIN_SUBSAMPLE)).into_vec();
        picked.sort_unstable();
        picked
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        coords_checked: coords.len(),
        worst: None,
    };
    for k in coords {
        let (id, offset) = store.locate(k).expect("coordinate in range");
        let original = store.coord(id, offset);
        store.set_coord(id, offset, original + eps);
        let plus = eval(&mut f, store);
        store.set_coord(id, offset, original - eps);
        let minus = eval(&mut f, store);
        store.set_coord(id, offset, original);
        let numeric = (plus? - minus?) / (2.0 * eps);

        let g = &grads[id.index()];
        let analytic = g[[offset / g.ncols(), offset % g.ncols()]];
        let rel = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8);
        if rel > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(rel);
            report.worst = Some((store.get(id).name.clone(), offset));
        }
    }
    Ok(report)
}
