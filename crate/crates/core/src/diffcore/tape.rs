//! Tape-based reverse-mode differentiation over dense row-major matrices.
//!
//! Every value on the tape is a 2-D `f64` matrix; vectors are `1×n` rows and
//! scalars are `1×1`. Operations are appended in evaluation order, so the node
//! list is already a topological order and [`Tape::backward`] is a single
//! reverse sweep.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};

use super::params::{ParamId, ParameterStore};
use crate::{Error, Result};

pub type Mat = Array2<f64>;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    OneMinus(Var),
    Sigmoid(Var),
    Tanh(Var),
    SoftmaxRows(Var),
    Log { x: Var, floor: f64 },
    Mean(Var),
    Sum(Var),
    SumOfSquares(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols { x: Var, start: usize },
    SliceRows { x: Var, start: usize },
    Reshape(Var),
    Transpose(Var),
}

#[derive(Debug)]
struct Node {
    value: Mat,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by one backward sweep. Only leaves that were created
/// with `requires_grad` (inputs and parameters) keep their gradient.
#[derive(Debug)]
pub struct Gradients {
    leaves: Vec<Option<Mat>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient with respect to a leaf. `None` if the leaf did not influence the loss.
    pub fn wrt(&self, v: Var) -> Option<&Mat> {
        self.leaves.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn param(&self, id: ParamId) -> Option<&Mat> {
        self.params
            .iter()
            .find(|(p, _)| *p == id)
            .and_then(|(_, v)| self.wrt(*v))
    }

    /// Dense per-parameter gradients in store order; unused parameters get zeros.
    pub fn dense(&self, store: &ParameterStore) -> Vec<Mat> {
        store
            .iter()
            .map(|(id, p)| {
                self.param(id)
                    .cloned()
                    .unwrap_or_else(|| Mat::zeros(p.value.dim()))
            })
            .collect()
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(ParamId, Var)>,
}

fn same_shape(op: &'static str, a: &Mat, b: &Mat) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch {
            op,
            left: a.dim(),
            right: b.dim(),
        });
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_rows(x: ArrayView2<f64>) -> Mat {
    let mut out = x.to_owned();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// Scalar value of a `1×1` node.
    pub fn scalar(&self, v: Var) -> Result<f64> {
        let m = self.value(v);
        if m.dim() != (1, 1) {
            return Err(Error::NotScalar(m.dim()));
        }
        Ok(m[[0, 0]])
    }

    fn push(&mut self, value: Mat, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records a constant; no gradient flows into it.
    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Records a differentiable input leaf.
    pub fn input(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records (once per tape) a leaf holding the current value of a parameter.
    pub fn param(&mut self, store: &ParameterStore, id: ParamId) -> Var {
        if let Some((_, v)) = self.params.iter().find(|(p, _)| *p == id) {
            return *v;
        }
        let v = self.input(store.value(id).clone());
        self.params.push((id, v));
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.ncols() != bv.nrows() {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: av.dim(),
                right: bv.dim(),
            });
        }
        let out = av.dot(bv);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ`, the batched form of applying an `[out×in]` weight to rows of inputs.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.ncols() != bv.ncols() {
            return Err(Error::ShapeMismatch {
                op: "matmul_bt",
                left: av.dim(),
                right: bv.dim(),
            });
        }
        let out = av.dot(&bv.t());
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMulBt(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let out = self.value(a) + self.value(b);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// Adds a `1×n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (av, rv) = (self.value(a), self.value(row));
        if rv.nrows() != 1 || rv.ncols() != av.ncols() {
            return Err(Error::ShapeMismatch {
                op: "add_row",
                left: av.dim(),
                right: rv.dim(),
            });
        }
        let out = av + rv;
        let rg = self.rg(&[a, row]);
        Ok(self.push(out, Op::AddRow(a, row), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", self.value(a), self.value(b))?;
        let out = self.value(a) - self.value(b);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("elementwise_mul", self.value(a), self.value(b))?;
        let out = self.value(a) * self.value(b);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    /// Scales row `i` of `a` by `col[i, 0]`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (av, cv) = (self.value(a), self.value(col));
        if cv.ncols() != 1 || cv.nrows() != av.nrows() {
            return Err(Error::ShapeMismatch {
                op: "mul_col",
                left: av.dim(),
                right: cv.dim(),
            });
        }
        let out = av * cv;
        let rg = self.rg(&[a, col]);
        Ok(self.push(out, Op::MulCol(a, col), rg))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a) * k;
        let rg = self.rg(&[a]);
        self.push(out, Op::Scale(a, k), rg)
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|v| 1.0 - v);
        let rg = self.rg(&[a]);
        self.push(out, Op::OneMinus(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(sigmoid);
        let rg = self.rg(&[a]);
        self.push(out, Op::Sigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::tanh);
        let rg = self.rg(&[a]);
        self.push(out, Op::Tanh(a), rg)
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Var {
        let out = softmax_rows(self.value(a).view());
        let rg = self.rg(&[a]);
        self.push(out, Op::SoftmaxRows(a), rg)
    }

    /// Natural log of `max(x, floor)`; the gradient is zero where the floor is active.
    pub fn log(&mut self, a: Var, floor: f64) -> Var {
        let out = self.value(a).mapv(|v| v.max(floor).ln());
        let rg = self.rg(&[a]);
        self.push(out, Op::Log { x: a, floor }, rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let out = Mat::from_elem((1, 1), m.sum() / m.len() as f64);
        let rg = self.rg(&[a]);
        self.push(out, Op::Mean(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Mat::from_elem((1, 1), self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(out, Op::Sum(a), rg)
    }

    pub fn sum_of_squares(&mut self, a: Var) -> Var {
        let out = Mat::from_elem((1, 1), self.value(a).iter().map(|v| v * v).sum());
        let rg = self.rg(&[a]);
        self.push(out, Op::SumOfSquares(a), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::EmptySequence)?;
        let rows = self.value(first).nrows();
        for p in parts {
            if self.value(*p).nrows() != rows {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    left: self.value(first).dim(),
                    right: self.value(*p).dim(),
                });
            }
        }
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let out = concatenate(Axis(1), &views).expect("row counts checked");
        let rg = self.rg(parts);
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::EmptySequence)?;
        let cols = self.value(first).ncols();
        for p in parts {
            if self.value(*p).ncols() != cols {
                return Err(Error::ShapeMismatch {
                    op: "concat_rows",
                    left: self.value(first).dim(),
                    right: self.value(*p).dim(),
                });
            }
        }
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let out = concatenate(Axis(0), &views).expect("column counts checked");
        let rg = self.rg(parts);
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let av = self.value(a);
        if start + len > av.ncols() || len == 0 {
            return Err(Error::ShapeMismatch {
                op: "slice_cols",
                left: av.dim(),
                right: (start, start + len),
            });
        }
        let out = av.slice(s![.., start..start + len]).to_owned();
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::SliceCols { x: a, start }, rg))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let av = self.value(a);
        if start + len > av.nrows() || len == 0 {
            return Err(Error::ShapeMismatch {
                op: "slice_rows",
                left: av.dim(),
                right: (start, start + len),
            });
        }
        let out = av.slice(s![start..start + len, ..]).to_owned();
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::SliceRows { x: a, start }, rg))
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let av = self.value(a);
        if av.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                left: av.dim(),
                right: (rows, cols),
            });
        }
        let flat: Vec<f64> = av.iter().copied().collect();
        let out = Mat::from_shape_vec((rows, cols), flat).expect("length checked");
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).t().to_owned();
        let rg = self.rg(&[a]);
        self.push(out, Op::Transpose(a), rg)
    }

    /// Reverse sweep from a scalar `loss`. Intermediate gradients are dropped as
    /// soon as they have been propagated.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(Error::NotScalar(shape));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Mat>> = vec![None; n];
        let mut leaves: Vec<Option<Mat>> = vec![None; n];
        grads[loss.0] = Some(Mat::ones((1, 1)));

        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if let Op::Leaf = node.op {
                leaves[i] = Some(g);
            } else {
                self.propagate(node, g, &mut grads);
            }
        }
        Ok(Gradients {
            leaves,
            params: self.params.clone(),
        })
    }

    fn acc(&self, grads: &mut [Option<Mat>], v: Var, g: Mat) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => *existing += &g,
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: Mat, grads: &mut [Option<Mat>]) {
        let y = &node.value;
        match &node.op {
            Op::Leaf => unreachable!("leaves are handled by backward"),
            Op::MatMul(a, b) => {
                if self.nodes[a.0].requires_grad {
                    self.acc(grads, *a, g.dot(&self.value(*b).t()));
                }
                if self.nodes[b.0].requires_grad {
                    self.acc(grads, *b, self.value(*a).t().dot(&g));
                }
            }
            Op::MatMulBt(a, b) => {
                if self.nodes[a.0].requires_grad {
                    self.acc(grads, *a, g.dot(self.value(*b)));
                }
                if self.nodes[b.0].requires_grad {
                    self.acc(grads, *b, g.t().dot(self.value(*a)));
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *b, g.clone());
                self.acc(grads, *a, g);
            }
            Op::AddRow(a, row) => {
                self.acc(grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                self.acc(grads, *a, g);
            }
            Op::Sub(a, b) => {
                self.acc(grads, *b, -&g);
                self.acc(grads, *a, g);
            }
            Op::Mul(a, b) => {
                if self.nodes[a.0].requires_grad {
                    self.acc(grads, *a, &g * self.value(*b));
                }
                if self.nodes[b.0].requires_grad {
                    self.acc(grads, *b, &g * self.value(*a));
                }
            }
            Op::MulCol(a, col) => {
                if self.nodes[col.0].requires_grad {
                    let gc = (&g * self.value(*a)).sum_axis(Axis(1)).insert_axis(Axis(1));
                    self.acc(grads, *col, gc);
                }
                if self.nodes[a.0].requires_grad {
                    self.acc(grads, *a, &g * self.value(*col));
                }
            }
            Op::Scale(a, k) => self.acc(grads, *a, g * *k),
            Op::OneMinus(a) => self.acc(grads, *a, -g),
            Op::Sigmoid(a) => {
                let mut d = g;
                d.zip_mut_with(y, |gi, &yi| *gi *= yi * (1.0 - yi));
                self.acc(grads, *a, d);
            }
            Op::Tanh(a) => {
                let mut d = g;
                d.zip_mut_with(y, |gi, &yi| *gi *= 1.0 - yi * yi);
                self.acc(grads, *a, d);
            }
            Op::SoftmaxRows(a) => {
                let gy = &g * y;
                let dot = gy.sum_axis(Axis(1)).insert_axis(Axis(1));
                let d = y * &(&g - &dot);
                self.acc(grads, *a, d);
            }
            Op::Log { x, floor } => {
                let mut d = g;
                d.zip_mut_with(self.value(*x), |gi, &xi| {
                    *gi = if xi > *floor { *gi / xi } else { 0.0 };
                });
                self.acc(grads, *x, d);
            }
            Op::Mean(a) => {
                let av = self.value(*a);
                let k = g[[0, 0]] / av.len() as f64;
                self.acc(grads, *a, Mat::from_elem(av.dim(), k));
            }
            Op::Sum(a) => {
                let av = self.value(*a);
                self.acc(grads, *a, Mat::from_elem(av.dim(), g[[0, 0]]));
            }
            Op::SumOfSquares(a) => {
                let k = 2.0 * g[[0, 0]];
                self.acc(grads, *a, self.value(*a) * k);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let w = self.value(*p).ncols();
                    if self.nodes[p.0].requires_grad {
                        self.acc(grads, *p, g.slice(s![.., offset..offset + w]).to_owned());
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let h = self.value(*p).nrows();
                    if self.nodes[p.0].requires_grad {
                        self.acc(grads, *p, g.slice(s![offset..offset + h, ..]).to_owned());
                    }
                    offset += h;
                }
            }
            Op::SliceCols { x, start } => {
                let mut d = Mat::zeros(self.value(*x).dim());
                d.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                self.acc(grads, *x, d);
            }
            Op::SliceRows { x, start } => {
                let mut d = Mat::zeros(self.value(*x).dim());
                d.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                self.acc(grads, *x, d);
            }
            Op::Reshape(a) => {
                let flat: Vec<f64> = g.iter().copied().collect();
                let d = Mat::from_shape_vec(self.value(*a).dim(), flat).expect("same length");
                self.acc(grads, *a, d);
            }
            Op::Transpose(a) => self.acc(grads, *a, g.t().to_owned()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::params::ParamKind;
    use ndarray::array;
    use proptest::prelude::*;

    fn naive_matmul(a: &Mat, b: &Mat) -> Mat {
        let mut c = Mat::zeros((a.nrows(), b.ncols()));
        for i in 0..a.nrows() {
            for j in 0..b.ncols() {
                let mut acc = 0.0;
                for k in 0..a.ncols() {
                    acc += a[[i, k]] * b[[k, j]];
                }
                c[[i, j]] = acc;
            }
        }
        c
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut t = Tape::new();
        let x = t.constant(Mat::zeros((1, 5)));
        let y = t.softmax(x);
        for v in t.value(y) {
            assert!((v - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn sigmoid_at_zero() {
        let mut t = Tape::new();
        let x = t.constant(Mat::zeros((1, 1)));
        let y = t.sigmoid(x);
        assert_eq!(t.scalar(y).unwrap(), 0.5);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let a = array![[1.0, -2.0, 0.5], [3.0, 0.25, -1.0]];
        let b = array![[0.3, 1.0, -1.0, 2.0], [0.0, 4.0, 0.5, -0.5], [1.5, -2.0, 1.0, 0.0]];
        let mut t = Tape::new();
        let (va, vb) = (t.constant(a.clone()), t.constant(b.clone()));
        let c = t.matmul(va, vb).unwrap();
        assert_eq!(t.shape(c), (2, 4));
        let oracle = naive_matmul(&a, &b);
        for (x, y) in t.value(c).iter().zip(oracle.iter()) {
            assert!((x - y).abs() < 1e-14);
        }
        let bt = t.constant(b.t().to_owned());
        let c2 = t.matmul_bt(va, bt).unwrap();
        assert_eq!(t.value(c2), t.value(c));
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let mut t = Tape::new();
        let a = t.constant(Mat::zeros((2, 3)));
        let b = t.constant(Mat::zeros((2, 4)));
        let err = t.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("(2, 3)") && err.contains("(2, 4)"), "{err}");
        assert!(t.add(a, b).is_err());
    }

    #[test]
    fn sum_of_squares_gradient_is_twice_theta() {
        let mut store = ParameterStore::new();
        let id = store.add("theta", array![[0.5, -1.5, 2.0]], ParamKind::Weight);
        let mut t = Tape::new();
        let x = t.param(&store, id);
        let loss = t.sum_of_squares(x);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.param(id).unwrap(), &array![[1.0, -3.0, 4.0]]);
    }

    #[test]
    fn mean_sigmoid_gradient_at_zero() {
        let mut t = Tape::new();
        let x = t.input(Mat::zeros((1, 1)));
        let s = t.sigmoid(x);
        let loss = t.mean(s);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.wrt(x).unwrap()[[0, 0]], 0.25);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut t = Tape::new();
        let x = t.input(Mat::zeros((2, 1)));
        let y = t.tanh(x);
        assert!(matches!(t.backward(y), Err(Error::NotScalar((2, 1)))));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::new();
        let x = t.input(Mat::ones((1, 2)));
        let c = t.constant(Mat::ones((1, 2)));
        let y = t.mul(x, c).unwrap();
        let loss = t.sum(y);
        let g = t.backward(loss).unwrap();
        assert!(g.wrt(c).is_none());
        assert!(g.wrt(x).is_some());
    }

    #[test]
    fn every_op_passes_finite_differences() {
        use crate::diffcore::grad_check;
        let mut store = ParameterStore::new();
        let a = store.add("a", array![[0.3, -0.7, 1.1], [0.2, 0.9, -0.4]], ParamKind::Weight);
        let b = store.add("b", array![[0.5, -0.1], [0.4, 0.8], [-0.6, 0.3]], ParamKind::Weight);
        let r = store.add("r", array![[0.1, -0.2, 0.3]], ParamKind::Bias);
        let c = store.add("c", array![[0.7], [-1.3]], ParamKind::Bias);
        let report = grad_check(
            &mut store,
            |t, s| {
                let (va, vb, vr, vc) = (t.param(s, a), t.param(s, b), t.param(s, r), t.param(s, c));
                let ab = t.matmul(va, vb)?; // 2x2
                let abt = t.matmul_bt(va, va)?; // 2x2
                let sum = t.add(ab, abt)?;
                let diff = t.sub(sum, ab)?;
                let prod = t.mul(diff, sum)?;
                let withrow = t.add_row(va, vr)?;
                let colmul = t.mul_col(withrow, vc)?;
                let sig = t.sigmoid(colmul);
                let th = t.tanh(prod);
                let om = t.one_minus(sig);
                let cat = t.concat_cols(&[om, th])?; // 2x5
                let cat2 = t.concat_rows(&[cat, cat])?; // 4x5
                let sl = t.slice_cols(cat2, 1, 3)?;
                let sr = t.slice_rows(sl, 1, 2)?;
                let rs = t.reshape(sr, 3, 2)?;
                let tr = t.transpose(rs);
                let sm = t.softmax(tr);
                let lg = t.log(sm, 1e-12);
                let sc = t.scale(lg, -0.5);
                let m = t.mean(sc);
                let q = t.sum_of_squares(th);
                t.add(m, q)
            },
            1e-5,
            1000,
            0,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-7, "{report:?}");
    }

    proptest! {
        #[test]
        fn softmax_rows_normalized_and_shift_invariant(
            xs in proptest::collection::vec(-50.0f64..50.0, 1..12),
            shift in -100.0f64..100.0,
        ) {
            let n = xs.len();
            let x = Mat::from_shape_vec((1, n), xs).unwrap();
            let y = softmax_rows(x.view());
            prop_assert!((y.sum() - 1.0).abs() < 1e-12);
            let shifted = softmax_rows((&x + shift).view());
            for (a, b) in y.iter().zip(shifted.iter()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
