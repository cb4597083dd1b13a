//! GRU cell and bidirectional GRU layer.
//!
//! Batched tape functions take row-stacked inputs: a sequence of `K` steps over
//! a batch of `B` independent sequences is a `[(K·B)×D]` matrix whose rows
//! `t·B .. (t+1)·B` hold step `t`.

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::diffcore::{linear, Mat, ParamId, ParamKind, ParameterStore, Tape, Var};
use crate::{Error, Result};

/// The nine tensors of one GRU direction.
#[derive(Debug, Clone)]
pub struct GruParams {
    pub input_size: usize,
    pub hidden_size: usize,
    pub w_sr: ParamId,
    pub w_sz: ParamId,
    pub w_sh: ParamId,
    pub w_hr: ParamId,
    pub w_hz: ParamId,
    pub w_hh: ParamId,
    pub b_r: ParamId,
    pub b_z: ParamId,
    pub b_h: ParamId,
}

impl GruParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParameterStore,
        prefix: &str,
        input_size: usize,
        hidden_size: usize,
        rng: &mut R,
    ) -> Self {
        let (d, h) = (input_size, hidden_size);
        Self {
            input_size,
            hidden_size,
            w_sr: store.add_glorot(format!("{prefix}.w_sr"), h, d, rng),
            w_sz: store.add_glorot(format!("{prefix}.w_sz"), h, d, rng),
            w_sh: store.add_glorot(format!("{prefix}.w_sh"), h, d, rng),
            w_hr: store.add_glorot(format!("{prefix}.w_hr"), h, h, rng),
            w_hz: store.add_glorot(format!("{prefix}.w_hz"), h, h, rng),
            w_hh: store.add_glorot(format!("{prefix}.w_hh"), h, h, rng),
            b_r: store.add_zeros(format!("{prefix}.b_r"), 1, h, ParamKind::Bias),
            b_z: store.add_zeros(format!("{prefix}.b_z"), 1, h, ParamKind::Bias),
            b_h: store.add_zeros(format!("{prefix}.b_h"), 1, h, ParamKind::Bias),
        }
    }

    /// Input projections `X·W_sᵀ + b` for the three gates, over all rows at once.
    fn project_inputs(&self, tape: &mut Tape, store: &ParameterStore, x_all: Var) -> Result<[Var; 3]> {
        let mut out = [x_all; 3];
        for (slot, (w, b)) in out
            .iter_mut()
            .zip([(self.w_sr, self.b_r), (self.w_sz, self.b_z), (self.w_sh, self.b_h)])
        {
            let (w, b) = (tape.param(store, w), tape.param(store, b));
            *slot = linear(tape, x_all, w, b)?;
        }
        Ok(out)
    }

    fn step_projected(&self, tape: &mut Tape, store: &ParameterStore, proj: [Var; 3], h: Var) -> Result<Var> {
        let [xr, xz, xh] = proj;
        let w_hr = tape.param(store, self.w_hr);
        let w_hz = tape.param(store, self.w_hz);
        let w_hh = tape.param(store, self.w_hh);

        let hr = tape.matmul_bt(h, w_hr)?;
        let r_pre = tape.add(xr, hr)?;
        let r = tape.sigmoid(r_pre);

        let hz = tape.matmul_bt(h, w_hz)?;
        let z_pre = tape.add(xz, hz)?;
        let z = tape.sigmoid(z_pre);

        let rh = tape.mul(r, h)?;
        let hh = tape.matmul_bt(rh, w_hh)?;
        let cand_pre = tape.add(xh, hh)?;
        let cand = tape.tanh(cand_pre);

        let keep = tape.mul(z, h)?;
        let one_minus_z = tape.one_minus(z);
        let fresh = tape.mul(one_minus_z, cand)?;
        tape.add(keep, fresh)
    }

    /// One cell update for a batch: `x` is `[B×D]`, `h` is `[B×H]`.
    pub fn step(&self, tape: &mut Tape, store: &ParameterStore, x: Var, h: Var) -> Result<Var> {
        let (b, d) = tape.shape(x);
        if d != self.input_size || tape.shape(h) != (b, self.hidden_size) {
            return Err(Error::ShapeMismatch {
                op: "gru_cell",
                left: (b, d),
                right: tape.shape(h),
            });
        }
        let proj = self.project_inputs(tape, store, x)?;
        self.step_projected(tape, store, proj, h)
    }

    /// Hidden states for `steps` steps over a batch, iterating forward or in reverse
    /// from a zero initial state. Returned in step order `0..steps`.
    pub fn run(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        x_all: Var,
        steps: usize,
        batch: usize,
        reverse: bool,
    ) -> Result<Vec<Var>> {
        let (rows, d) = tape.shape(x_all);
        if steps == 0 {
            return Err(Error::EmptySequence);
        }
        if rows != steps * batch || d != self.input_size {
            return Err(Error::ShapeMismatch {
                op: "gru_run",
                left: (rows, d),
                right: (steps * batch, self.input_size),
            });
        }
        let proj = self.project_inputs(tape, store, x_all)?;
        let mut h = tape.constant(Mat::zeros((batch, self.hidden_size)));
        let mut states = vec![h; steps];
        let order: Vec<usize> = if reverse {
            (0..steps).rev().collect()
        } else {
            (0..steps).collect()
        };
        for t in order {
            let mut p = proj;
            for v in p.iter_mut() {
                *v = tape.slice_rows(*v, t * batch, batch)?;
            }
            h = self.step_projected(tape, store, p, h)?;
            states[t] = h;
        }
        Ok(states)
    }
}

/// Forward and backward GRUs plus the output projection `W_out·[h_b ⊕ h_f] + b_out`.
#[derive(Debug, Clone)]
pub struct BiRnnParams {
    pub forward: GruParams,
    pub backward: GruParams,
    pub w_out: ParamId,
    pub b_out: ParamId,
    pub output_size: usize,
}

impl BiRnnParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParameterStore,
        prefix: &str,
        input_size: usize,
        hidden_size: usize,
        output_size: usize,
        rng: &mut R,
    ) -> Self {
        let forward = GruParams::new(store, &format!("{prefix}.fwd"), input_size, hidden_size, rng);
        let backward = GruParams::new(store, &format!("{prefix}.bwd"), input_size, hidden_size, rng);
        let w_out = store.add_glorot(format!("{prefix}.w_out"), output_size, 2 * hidden_size, rng);
        let b_out = store.add_zeros(format!("{prefix}.b_out"), 1, output_size, ParamKind::Bias);
        Self {
            forward,
            backward,
            w_out,
            b_out,
            output_size,
        }
    }

    /// Batched pass over `[(K·B)×D]` step-major rows; returns `[(K·B)×D_out]`.
    pub fn run(&self, tape: &mut Tape, store: &ParameterStore, x_all: Var, steps: usize, batch: usize) -> Result<Var> {
        let hf = self.forward.run(tape, store, x_all, steps, batch, false)?;
        let hb = self.backward.run(tape, store, x_all, steps, batch, true)?;
        let hf = tape.concat_rows(&hf)?;
        let hb = tape.concat_rows(&hb)?;
        let both = tape.concat_cols(&[hb, hf])?;
        let w = tape.param(store, self.w_out);
        let b = tape.param(store, self.b_out);
        linear(tape, both, w, b)
    }
}

fn row(v: &Array1<f64>) -> Mat {
    v.clone().insert_axis(ndarray::Axis(0))
}

/// Single GRU update for one input vector.
pub fn gru_cell(x: &Array1<f64>, h_prev: &Array1<f64>, p: &GruParams, store: &ParameterStore) -> Result<Array1<f64>> {
    let mut tape = Tape::new();
    let xv = tape.constant(row(x));
    let hv = tape.constant(row(h_prev));
    let h = p.step(&mut tape, store, xv, hv)?;
    Ok(tape.value(h).row(0).to_owned())
}

/// Bidirectional pass over one sequence of input vectors.
pub fn bidirectional_pass(inputs: &[Array1<f64>], p: &BiRnnParams, store: &ParameterStore) -> Result<Vec<Array1<f64>>> {
    if inputs.is_empty() {
        return Err(Error::EmptySequence);
    }
    let d = inputs[0].len();
    if inputs.iter().any(|x| x.len() != d) {
        return Err(Error::ShapeMismatch {
            op: "bidirectional_pass",
            left: (1, d),
            right: (1, inputs.iter().map(|x| x.len()).find(|&n| n != d).unwrap_or(d)),
        });
    }
    let mut x = Array2::zeros((inputs.len(), d));
    for (mut r, v) in x.rows_mut().into_iter().zip(inputs) {
        r.assign(v);
    }
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let out = p.run(&mut tape, store, xv, inputs.len(), 1)?;
    Ok(tape.value(out).rows().into_iter().map(|r| r.to_owned()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{grad_check, rng::seeded};
    use ndarray::{array, Array1};
    use rand::Rng;

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    /// Scalar-by-scalar GRU, written independently of the tape.
    fn oracle_cell(x: &[f64], h: &[f64], p: &GruParams, s: &ParameterStore) -> Vec<f64> {
        let get = |id: ParamId| s.value(id).clone();
        let (w_sr, w_sz, w_sh) = (get(p.w_sr), get(p.w_sz), get(p.w_sh));
        let (w_hr, w_hz, w_hh) = (get(p.w_hr), get(p.w_hz), get(p.w_hh));
        let (b_r, b_z, b_h) = (get(p.b_r), get(p.b_z), get(p.b_h));
        let hs = h.len();
        let mut r = vec![0.0; hs];
        let mut z = vec![0.0; hs];
        for i in 0..hs {
            let mut ar = b_r[[0, i]];
            let mut az = b_z[[0, i]];
            for j in 0..x.len() {
                ar += w_sr[[i, j]] * x[j];
                az += w_sz[[i, j]] * x[j];
            }
            for j in 0..hs {
                ar += w_hr[[i, j]] * h[j];
                az += w_hz[[i, j]] * h[j];
            }
            r[i] = sig(ar);
            z[i] = sig(az);
        }
        let mut out = vec![0.0; hs];
        for i in 0..hs {
            let mut a = b_h[[0, i]];
            for j in 0..x.len() {
                a += w_sh[[i, j]] * x[j];
            }
            for j in 0..hs {
                a += w_hh[[i, j]] * r[j] * h[j];
            }
            out[i] = z[i] * h[i] + (1.0 - z[i]) * a.tanh();
        }
        out
    }

    fn oracle_bidir(xs: &[Vec<f64>], p: &BiRnnParams, s: &ParameterStore) -> Vec<Vec<f64>> {
        let k = xs.len();
        let hsz = p.forward.hidden_size;
        let mut hf = vec![vec![0.0; hsz]; k];
        let mut h = vec![0.0; hsz];
        for t in 0..k {
            h = oracle_cell(&xs[t], &h, &p.forward, s);
            hf[t] = h.clone();
        }
        let mut hb = vec![vec![0.0; hsz]; k];
        let mut h = vec![0.0; hsz];
        for t in (0..k).rev() {
            h = oracle_cell(&xs[t], &h, &p.backward, s);
            hb[t] = h.clone();
        }
        let w = s.value(p.w_out);
        let b = s.value(p.b_out);
        (0..k)
            .map(|t| {
                let cat: Vec<f64> = hb[t].iter().chain(&hf[t]).copied().collect();
                (0..p.output_size)
                    .map(|i| b[[0, i]] + (0..cat.len()).map(|j| w[[i, j]] * cat[j]).sum::<f64>())
                    .collect()
            })
            .collect()
    }

    fn randomize(store: &mut ParameterStore, seed: u64, scale: f64) {
        let mut rng = seeded(seed);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            store.value_mut(id).mapv_inplace(|_| scale * rng.random_range(-1.0..1.0));
        }
    }

    fn rand_vec(rng: &mut impl Rng, n: usize) -> Array1<f64> {
        Array1::from_shape_simple_fn(n, || rng.random_range(-1.5..1.5))
    }

    #[test]
    fn zero_everything_gives_zero_state() {
        let mut store = ParameterStore::new();
        let p = GruParams::new(&mut store, "g", 3, 2, &mut seeded(0));
        randomize(&mut store, 0, 0.0);
        let h = gru_cell(&Array1::zeros(3), &Array1::zeros(2), &p, &store).unwrap();
        assert_eq!(h, array![0.0, 0.0]);
    }

    #[test]
    fn saturated_update_gate_copies_state() {
        let mut store = ParameterStore::new();
        let p = GruParams::new(&mut store, "g", 3, 2, &mut seeded(1));
        store.value_mut(p.b_z).fill(30.0);
        let h_prev = array![0.4, -0.7];
        let h = gru_cell(&array![5.0, -3.0, 2.0], &h_prev, &p, &store).unwrap();
        for (a, b) in h.iter().zip(h_prev.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn cell_matches_scalar_oracle() {
        let mut store = ParameterStore::new();
        let p = GruParams::new(&mut store, "g", 3, 2, &mut seeded(2));
        randomize(&mut store, 3, 1.0);
        let mut rng = seeded(4);
        for _ in 0..10 {
            let x = rand_vec(&mut rng, 3);
            let h = rand_vec(&mut rng, 2);
            let got = gru_cell(&x, &h, &p, &store).unwrap();
            let want = oracle_cell(x.as_slice().unwrap(), h.as_slice().unwrap(), &p, &store);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-14);
            }
        }
        assert!(gru_cell(&Array1::zeros(4), &Array1::zeros(2), &p, &store).is_err());
    }

    #[test]
    fn single_step_reduction_and_zero_params() {
        let mut store = ParameterStore::new();
        let p = BiRnnParams::new(&mut store, "bi", 3, 2, 4, &mut seeded(5));
        randomize(&mut store, 6, 1.0);
        let x = array![0.3, -0.2, 0.9];
        let out = bidirectional_pass(std::slice::from_ref(&x), &p, &store).unwrap();
        let hb = gru_cell(&x, &Array1::zeros(2), &p.backward, &store).unwrap();
        let hf = gru_cell(&x, &Array1::zeros(2), &p.forward, &store).unwrap();
        let cat = ndarray::concatenate![ndarray::Axis(0), hb, hf];
        let want = store.value(p.w_out).dot(&cat) + store.value(p.b_out).row(0);
        for (a, b) in out[0].iter().zip(want.iter()) {
            assert!((a - b).abs() < 1e-14);
        }

        let mut zero = ParameterStore::new();
        let pz = BiRnnParams::new(&mut zero, "bi", 3, 2, 4, &mut seeded(5));
        randomize(&mut zero, 0, 0.0);
        zero.value_mut(pz.b_out).assign(&array![[1.0, 2.0, 3.0, 4.0]]);
        let outs = bidirectional_pass(&[x.clone(), x.clone(), x], &pz, &zero).unwrap();
        for o in outs {
            assert_eq!(o, array![1.0, 2.0, 3.0, 4.0]);
        }
        assert!(matches!(bidirectional_pass(&[], &p, &store), Err(Error::EmptySequence)));
    }

    #[test]
    fn unrolled_oracle_k4() {
        let mut store = ParameterStore::new();
        let p = BiRnnParams::new(&mut store, "bi", 3, 2, 3, &mut seeded(7));
        randomize(&mut store, 8, 0.8);
        let mut rng = seeded(9);
        let xs: Vec<Array1<f64>> = (0..4).map(|_| rand_vec(&mut rng, 3)).collect();
        let got = bidirectional_pass(&xs, &p, &store).unwrap();
        let plain: Vec<Vec<f64>> = xs.iter().map(|x| x.to_vec()).collect();
        let want = oracle_bidir(&plain, &p, &store);
        for (g, w) in got.iter().zip(&want) {
            for (a, b) in g.iter().zip(w) {
                assert!((a - b).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn time_reversal_duality() {
        let mut store = ParameterStore::new();
        let p = BiRnnParams::new(&mut store, "bi", 3, 2, 3, &mut seeded(10));
        randomize(&mut store, 11, 1.0);
        let mut rng = seeded(12);
        let xs: Vec<Array1<f64>> = (0..6).map(|_| rand_vec(&mut rng, 3)).collect();
        let out = bidirectional_pass(&xs, &p, &store).unwrap();

        let mut swapped_store = store.clone();
        let pairs = [
            (p.forward.w_sr, p.backward.w_sr),
            (p.forward.w_sz, p.backward.w_sz),
            (p.forward.w_sh, p.backward.w_sh),
            (p.forward.w_hr, p.backward.w_hr),
            (p.forward.w_hz, p.backward.w_hz),
            (p.forward.w_hh, p.backward.w_hh),
            (p.forward.b_r, p.backward.b_r),
            (p.forward.b_z, p.backward.b_z),
            (p.forward.b_h, p.backward.b_h),
        ];
        for (a, b) in pairs {
            *swapped_store.value_mut(a) = store.value(b).clone();
            *swapped_store.value_mut(b) = store.value(a).clone();
        }
        let w = store.value(p.w_out);
        let h = p.forward.hidden_size;
        let swapped_w = ndarray::concatenate![ndarray::Axis(1), w.slice(ndarray::s![.., h..]), w.slice(ndarray::s![.., ..h])];
        *swapped_store.value_mut(p.w_out) = swapped_w;

        let reversed: Vec<_> = xs.iter().rev().cloned().collect();
        let out_rev = bidirectional_pass(&reversed, &p, &swapped_store).unwrap();
        for (a, b) in out.iter().rev().zip(&out_rev) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y).abs() < 1e-15, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn long_sequences_stay_bounded() {
        let mut store = ParameterStore::new();
        let p = BiRnnParams::new(&mut store, "bi", 4, 3, 2, &mut seeded(13));
        randomize(&mut store, 14, 3.0);
        let mut rng = seeded(15);
        let xs: Vec<Array1<f64>> = (0..500).map(|_| rand_vec(&mut rng, 4) * 10.0).collect();
        let mut tape = Tape::new();
        let mut x = Mat::zeros((500, 4));
        for (mut r, v) in x.rows_mut().into_iter().zip(&xs) {
            r.assign(v);
        }
        let xv = tape.constant(x);
        for reverse in [false, true] {
            let states = p.forward.run(&mut tape, &store, xv, 500, 1, reverse).unwrap();
            for s in states {
                assert!(tape.value(s).iter().all(|v| v.is_finite() && v.abs() <= 1.0));
            }
        }
        let out = bidirectional_pass(&xs, &p, &store).unwrap();
        assert!(out.iter().flatten().all(|v| v.is_finite()));
    }

    #[test]
    fn cell_gradient_check() {
        let mut store = ParameterStore::new();
        let p = GruParams::new(&mut store, "g", 3, 2, &mut seeded(16));
        randomize(&mut store, 17, 1.0);
        let x = store.add("x", array![[0.5, -1.0, 0.25]], ParamKind::Bias);
        let h0 = store.add("h0", array![[0.3, -0.6]], ParamKind::Bias);
        let report = grad_check(
            &mut store,
            |tape, s| {
                let xv = tape.param(s, x);
                let hv = tape.param(s, h0);
                let h = p.step(tape, s, xv, hv)?;
                let probe = tape.constant(array![[1.0, -2.0]]);
                let y = tape.mul(h, probe)?;
                Ok(tape.sum(y))
            },
            1e-5,
            1000,
            0,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-5, "{report:?}");
    }

    #[test]
    fn bptt_gradient_check_k5() {
        let mut store = ParameterStore::new();
        let p = BiRnnParams::new(&mut store, "bi", 3, 2, 3, &mut seeded(18));
        randomize(&mut store, 19, 0.9);
        let mut rng = seeded(20);
        let x = Mat::from_shape_simple_fn((10, 3), || rng.random_range(-1.0..1.0));
        let xid = store.add("x", x, ParamKind::Bias);
        let probe = Mat::from_shape_simple_fn((10, 3), || rng.random_range(-1.0..1.0));
        let report = grad_check(
            &mut store,
            |tape, s| {
                let xv = tape.param(s, xid);
                let out = p.run(tape, s, xv, 5, 2)?;
                let pr = tape.constant(probe.clone());
                let y = tape.mul(out, pr)?;
                Ok(tape.sum(y))
            },
            1e-5,
            10_000,
            0,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-5, "{report:?}");
    }
}
