//! Dense row-major matrices and a reverse-mode tape over them.
//!
//! Every value on the tape is a 2-D `f64` matrix. Parameters enter as
//! [`Op::Param`] leaves; [`Tape::backward`] returns one gradient per parameter
//! id that took part in the graph.

use std::collections::BTreeMap;

use super::params::{ParamId, ParamStore};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "tensor data length");
        Self { rows, cols, data }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self { rows: rows.len(), cols, data }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn gather_rows(&self, idx: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Tensor::from_vec(idx.len(), self.cols, data)
    }

    /// Stacks matrices with equal column counts.
    pub fn vstack(parts: &[&Tensor]) -> Tensor {
        let cols = parts.first().map_or(0, |p| p.cols);
        let mut data = Vec::new();
        for p in parts {
            assert_eq!(p.cols, cols, "vstack column mismatch");
            data.extend_from_slice(&p.data);
        }
        Tensor::from_vec(data.len() / cols.max(1), cols, data)
    }

    pub fn matmul(&self, b: &Tensor) -> Tensor {
        assert_eq!(self.cols, b.rows, "matmul inner dimension");
        let mut out = Tensor::zeros(self.rows, b.cols);
        for i in 0..self.rows {
            let o = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for (p, &a) in self.row(i).iter().enumerate() {
                if a != 0.0 {
                    for (ov, bv) in o.iter_mut().zip(b.row(p)) {
                        *ov += a * bv;
                    }
                }
            }
        }
        out
    }

    /// `self · bᵀ`
    pub fn matmul_nt(&self, b: &Tensor) -> Tensor {
        assert_eq!(self.cols, b.cols, "matmul_nt inner dimension");
        let mut out = Tensor::zeros(self.rows, b.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..b.rows {
                out.data[i * b.rows + j] = a.iter().zip(b.row(j)).map(|(x, y)| x * y).sum();
            }
        }
        out
    }

    /// `selfᵀ · b`
    pub fn matmul_tn(&self, b: &Tensor) -> Tensor {
        assert_eq!(self.rows, b.rows, "matmul_tn inner dimension");
        let mut out = Tensor::zeros(self.cols, b.cols);
        for i in 0..self.rows {
            let brow = b.row(i);
            for (p, &a) in self.row(i).iter().enumerate() {
                if a != 0.0 {
                    let o = &mut out.data[p * b.cols..(p + 1) * b.cols];
                    for (ov, bv) in o.iter_mut().zip(brow) {
                        *ov += a * bv;
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Const,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulConst(Var, Tensor),
    Scale(Var, f64),
    Shift(Var),
    Relu(Var),
    Sigmoid(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Tensor, inv_std: Vec<f64> },
    SoftmaxRows(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    GroupMax(Var, Vec<usize>),
    GroupWeightedSum(Var, Var),
    RowL2Normalize(Var, Vec<f64>),
    WeightedMeanRows { values: Var, weights: Var, total: f64 },
    BceWithLogits(Var, Vec<f64>),
    Huber(Var, Tensor, f64),
    SquaredError(Var, Tensor),
}

struct Node {
    value: Tensor,
    op: Op,
}

pub const LN_EPS: f64 = 1e-5;

/// Records operations for one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: BTreeMap<ParamId, Var>,
}

/// Gradients keyed by parameter id.
pub type ParamGrads = BTreeMap<ParamId, Tensor>;

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let t = self.value(v);
        assert_eq!(t.shape(), (1, 1), "not a scalar");
        t.data[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Const)
    }

    /// Leaf for a stored parameter; repeated calls share one node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(v) = self.params.get(&id) {
            return *v;
        }
        let v = self.push(store.get(id).clone(), Op::Param(id));
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_nt(self.value(b));
        self.push(v, Op::MatMulNT(a, b))
    }

    fn zip(&self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "{what} shape mismatch");
        Tensor::from_vec(x.rows, x.cols, x.data.iter().zip(&y.data).map(|(p, q)| f(*p, *q)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip(a, b, "add", |p, q| p + q);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip(a, b, "sub", |p, q| p - q);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip(a, b, "mul", |p, q| p * q);
        self.push(v, Op::Mul(a, b))
    }

    /// Adds the `1×c` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (x, r) = (self.value(a), self.value(b));
        assert_eq!((1, x.cols), r.shape(), "add_row shape");
        let mut v = x.clone();
        for i in 0..v.rows {
            for (o, b) in v.row_mut(i).iter_mut().zip(&r.data) {
                *o += b;
            }
        }
        self.push(v, Op::AddRow(a, b))
    }

    /// Element-wise product with a constant (dropout masks).
    pub fn mul_const(&mut self, a: Var, c: Tensor) -> Var {
        let x = self.value(a);
        assert_eq!(x.shape(), c.shape(), "mul_const shape");
        let v = Tensor::from_vec(x.rows, x.cols, x.data.iter().zip(&c.data).map(|(p, q)| p * q).collect());
        self.push(v, Op::MulConst(a, c))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x * s);
        self.push(v, Op::Scale(a, s))
    }

    /// Adds a constant of the same shape; the gradient passes through.
    pub fn shift(&mut self, a: Var, c: &Tensor) -> Var {
        let x = self.value(a);
        assert_eq!(x.shape(), c.shape(), "shift shape");
        let v = Tensor::from_vec(x.rows, x.cols, x.data.iter().zip(&c.data).map(|(p, q)| p + q).collect());
        self.push(v, Op::Shift(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    /// Row-wise layer norm with affine `1×c` gamma and beta.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let t = self.value(x);
        let (g, b) = (self.value(gamma), self.value(beta));
        assert_eq!(g.shape(), (1, t.cols), "layer_norm gamma shape");
        assert_eq!(b.shape(), (1, t.cols), "layer_norm beta shape");
        let mut xhat = Tensor::zeros(t.rows, t.cols);
        let mut out = Tensor::zeros(t.rows, t.cols);
        let mut inv_std = Vec::with_capacity(t.rows);
        let n = t.cols as f64;
        for i in 0..t.rows {
            let r = t.row(i);
            let mean = r.iter().sum::<f64>() / n;
            let var = r.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(is);
            for j in 0..t.cols {
                let h = (r[j] - mean) * is;
                xhat.data[i * t.cols + j] = h;
                out.data[i * t.cols + j] = h * g.data[j] + b.data[j];
            }
        }
        self.push(out, Op::LayerNorm { x, gamma, beta, xhat, inv_std })
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let v = softmax_rows(self.value(a));
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|p| self.value(*p).cols).sum();
        let mut v = Tensor::zeros(rows, cols);
        for i in 0..rows {
            let mut off = 0;
            for p in parts {
                let t = self.value(*p);
                assert_eq!(t.rows, rows, "concat_cols row mismatch");
                v.data[i * cols + off..i * cols + off + t.cols].copy_from_slice(t.row(i));
                off += t.cols;
            }
        }
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let ts: Vec<&Tensor> = parts.iter().map(|p| self.value(*p)).collect();
        let v = Tensor::vstack(&ts);
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let t = self.value(a);
        assert!(start < end && end <= t.cols, "slice_cols range");
        let mut v = Tensor::zeros(t.rows, end - start);
        for i in 0..t.rows {
            v.row_mut(i).copy_from_slice(&t.row(i)[start..end]);
        }
        self.push(v, Op::SliceCols(a, start))
    }

    /// Rows picked by index; indices may repeat.
    pub fn gather_rows(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let v = self.value(a).gather_rows(&idx);
        self.push(v, Op::GatherRows(a, idx))
    }

    /// Column-wise max over consecutive blocks of `group` rows.
    pub fn group_max(&mut self, a: Var, group: usize) -> Var {
        let t = self.value(a);
        assert!(group > 0 && t.rows.is_multiple_of(group), "group_max: {} rows not divisible by {group}", t.rows);
        let out_rows = t.rows / group;
        let mut v = Tensor::zeros(out_rows, t.cols);
        let mut arg = vec![0usize; out_rows * t.cols];
        for g in 0..out_rows {
            for c in 0..t.cols {
                let mut best = g * group;
                for r in g * group + 1..(g + 1) * group {
                    if t.at(r, c) > t.at(best, c) {
                        best = r;
                    }
                }
                v.data[g * t.cols + c] = t.at(best, c);
                arg[g * t.cols + c] = best;
            }
        }
        self.push(v, Op::GroupMax(a, arg))
    }

    /// Output row `u` is `Σ_j w[j] · a[u·m + j]` for `1×m` weights `w`.
    pub fn group_weighted_sum(&mut self, a: Var, w: Var) -> Var {
        let (t, wt) = (self.value(a), self.value(w));
        let m = wt.cols;
        assert!(wt.rows == 1 && m > 0 && t.rows % m == 0, "group_weighted_sum shape");
        let out_rows = t.rows / m;
        let mut v = Tensor::zeros(out_rows, t.cols);
        for u in 0..out_rows {
            for j in 0..m {
                let wj = wt.data[j];
                let src = t.row(u * m + j);
                for (o, s) in v.row_mut(u).iter_mut().zip(src) {
                    *o += wj * s;
                }
            }
        }
        self.push(v, Op::GroupWeightedSum(a, w))
    }

    /// Scales each row to unit Euclidean length.
    pub fn row_l2_normalize(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mut norms = Vec::with_capacity(t.rows);
        let mut v = t.clone();
        for i in 0..t.rows {
            let n = t.row(i).iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            norms.push(n);
            for x in v.row_mut(i) {
                *x /= n;
            }
        }
        self.push(v, Op::RowL2Normalize(a, norms))
    }

    /// `Σ_i w_i v_i / Σ_i w_i` over rows (`weights` is `N×1`), giving `1×c`.
    /// When the weights sum to zero, the plain mean of the rows is used.
    pub fn weighted_mean_rows(&mut self, values: Var, weights: Var) -> Var {
        let (v, w) = (self.value(values), self.value(weights));
        assert_eq!(w.shape(), (v.rows, 1), "weighted_mean_rows weights shape");
        let total: f64 = w.data.iter().sum();
        let mut out = Tensor::zeros(1, v.cols);
        if total.abs() > 1e-12 {
            for i in 0..v.rows {
                for (o, x) in out.data.iter_mut().zip(v.row(i)) {
                    *o += w.data[i] * x / total;
                }
            }
        } else {
            for i in 0..v.rows {
                for (o, x) in out.data.iter_mut().zip(v.row(i)) {
                    *o += x / v.rows as f64;
                }
            }
        }
        self.push(out, Op::WeightedMeanRows { values, weights, total })
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against targets in [0, 1].
    pub fn bce_with_logits(&mut self, logits: Var, targets: Vec<f64>) -> Var {
        let z = self.value(logits);
        assert_eq!(z.data.len(), targets.len(), "bce target length");
        let n = targets.len() as f64;
        let loss: f64 = z
            .data
            .iter()
            .zip(&targets)
            .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
            .sum::<f64>()
            / n;
        self.push(Tensor::from_vec(1, 1, vec![loss]), Op::BceWithLogits(logits, targets))
    }

    /// Huber loss against `target`, summed over elements.
    pub fn huber(&mut self, a: Var, target: Tensor, delta: f64) -> Var {
        let x = self.value(a);
        assert_eq!(x.shape(), target.shape(), "huber shape");
        let loss: f64 = x.data.iter().zip(&target.data).map(|(p, q)| huber(p - q, delta)).sum();
        self.push(Tensor::from_vec(1, 1, vec![loss]), Op::Huber(a, target, delta))
    }

    /// Sum of squared differences against `target`.
    pub fn squared_error(&mut self, a: Var, target: Tensor) -> Var {
        let x = self.value(a);
        assert_eq!(x.shape(), target.shape(), "squared_error shape");
        let loss: f64 = x.data.iter().zip(&target.data).map(|(p, q)| (p - q) * (p - q)).sum();
        self.push(Tensor::from_vec(1, 1, vec![loss]), Op::SquaredError(a, target))
    }

    /// Gradients of the scalar `loss` with respect to every parameter leaf.
    pub fn backward(&self, loss: Var) -> ParamGrads {
        assert_eq!(self.value(loss).shape(), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::from_vec(1, 1, vec![1.0]));
        let mut out = ParamGrads::new();

        fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut grads[v.0] {
                Some(e) => e.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Const => {}
                Op::Param(id) => {
                    out.insert(*id, g);
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    acc(&mut grads, *a, g.matmul_nt(bv));
                    acc(&mut grads, *b, av.matmul_tn(&g));
                }
                Op::MatMulNT(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    acc(&mut grads, *a, g.matmul(bv));
                    acc(&mut grads, *b, g.matmul_tn(av));
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, g.map(|x| -x));
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let ga = Tensor::from_vec(g.rows, g.cols, g.data.iter().zip(&bv.data).map(|(x, y)| x * y).collect());
                    let gb = Tensor::from_vec(g.rows, g.cols, g.data.iter().zip(&av.data).map(|(x, y)| x * y).collect());
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::AddRow(a, b) => {
                    let mut gb = Tensor::zeros(1, g.cols);
                    for i in 0..g.rows {
                        for (o, x) in gb.data.iter_mut().zip(g.row(i)) {
                            *o += x;
                        }
                    }
                    acc(&mut grads, *b, gb);
                    acc(&mut grads, *a, g);
                }
                Op::MulConst(a, c) => {
                    let ga = Tensor::from_vec(g.rows, g.cols, g.data.iter().zip(&c.data).map(|(x, y)| x * y).collect());
                    acc(&mut grads, *a, ga);
                }
                Op::Scale(a, s) => acc(&mut grads, *a, g.map(|x| x * s)),
                Op::Shift(a) => acc(&mut grads, *a, g),
                Op::Relu(a) => {
                    let x = self.value(*a);
                    let ga = Tensor::from_vec(
                        g.rows,
                        g.cols,
                        g.data.iter().zip(&x.data).map(|(d, v)| if *v > 0.0 { *d } else { 0.0 }).collect(),
                    );
                    acc(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    let ga = Tensor::from_vec(
                        g.rows,
                        g.cols,
                        g.data.iter().zip(&y.data).map(|(d, s)| d * s * (1.0 - s)).collect(),
                    );
                    acc(&mut grads, *a, ga);
                }
                Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                    let gam = self.value(*gamma);
                    let (rows, cols) = g.shape();
                    let mut gg = Tensor::zeros(1, cols);
                    let mut gb = Tensor::zeros(1, cols);
                    let mut gx = Tensor::zeros(rows, cols);
                    let n = cols as f64;
                    for i in 0..rows {
                        let (gr, hr) = (g.row(i), xhat.row(i));
                        let mut sum_d = 0.0;
                        let mut sum_dh = 0.0;
                        for j in 0..cols {
                            gg.data[j] += gr[j] * hr[j];
                            gb.data[j] += gr[j];
                            let d = gr[j] * gam.data[j];
                            sum_d += d;
                            sum_dh += d * hr[j];
                        }
                        for j in 0..cols {
                            let d = gr[j] * gam.data[j];
                            gx.data[i * cols + j] = inv_std[i] * (d - sum_d / n - hr[j] * sum_dh / n);
                        }
                    }
                    acc(&mut grads, *gamma, gg);
                    acc(&mut grads, *beta, gb);
                    acc(&mut grads, *x, gx);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ga = Tensor::zeros(g.rows, g.cols);
                    for i in 0..g.rows {
                        let (gr, yr) = (g.row(i), y.row(i));
                        let dot: f64 = gr.iter().zip(yr).map(|(p, q)| p * q).sum();
                        for (o, (d, s)) in ga.row_mut(i).iter_mut().zip(gr.iter().zip(yr)) {
                            *o = s * (d - dot);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let c = self.value(*p).cols;
                        let mut gp = Tensor::zeros(g.rows, c);
                        for i in 0..g.rows {
                            gp.row_mut(i).copy_from_slice(&g.row(i)[off..off + c]);
                        }
                        off += c;
                        acc(&mut grads, *p, gp);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let r = self.value(*p).rows;
                        let gp = Tensor::from_vec(r, g.cols, g.data[off * g.cols..(off + r) * g.cols].to_vec());
                        off += r;
                        acc(&mut grads, *p, gp);
                    }
                }
                Op::SliceCols(a, start) => {
                    let src = self.value(*a);
                    let mut ga = Tensor::zeros(src.rows, src.cols);
                    for i in 0..g.rows {
                        ga.row_mut(i)[*start..*start + g.cols].copy_from_slice(g.row(i));
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::GatherRows(a, idx) => {
                    let src = self.value(*a);
                    let mut ga = Tensor::zeros(src.rows, src.cols);
                    for (k, &i) in idx.iter().enumerate() {
                        for (o, x) in ga.row_mut(i).iter_mut().zip(g.row(k)) {
                            *o += x;
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::GroupMax(a, arg) => {
                    let src = self.value(*a);
                    let mut ga = Tensor::zeros(src.rows, src.cols);
                    for (k, &r) in arg.iter().enumerate() {
                        let c = k % src.cols;
                        ga.data[r * src.cols + c] += g.data[k];
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::GroupWeightedSum(a, w) => {
                    let (src, wt) = (self.value(*a), self.value(*w));
                    let m = wt.cols;
                    let mut ga = Tensor::zeros(src.rows, src.cols);
                    let mut gw = Tensor::zeros(1, m);
                    for u in 0..g.rows {
                        let gr = g.row(u);
                        for j in 0..m {
                            let r = u * m + j;
                            gw.data[j] += gr.iter().zip(src.row(r)).map(|(p, q)| p * q).sum::<f64>();
                            for (o, d) in ga.row_mut(r).iter_mut().zip(gr) {
                                *o += wt.data[j] * d;
                            }
                        }
                    }
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *w, gw);
                }
                Op::RowL2Normalize(a, norms) => {
                    let y = &node.value;
                    let mut ga = Tensor::zeros(g.rows, g.cols);
                    for i in 0..g.rows {
                        let (gr, yr) = (g.row(i), y.row(i));
                        let dot: f64 = gr.iter().zip(yr).map(|(p, q)| p * q).sum();
                        for (o, (d, v)) in ga.row_mut(i).iter_mut().zip(gr.iter().zip(yr)) {
                            *o = (d - v * dot) / norms[i];
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::WeightedMeanRows { values, weights, total } => {
                    let (v, w) = (self.value(*values), self.value(*weights));
                    let mean = &node.value;
                    let mut gv = Tensor::zeros(v.rows, v.cols);
                    let mut gw = Tensor::zeros(v.rows, 1);
                    if total.abs() > 1e-12 {
                        for i in 0..v.rows {
                            for (o, d) in gv.row_mut(i).iter_mut().zip(&g.data) {
                                *o = w.data[i] * d / total;
                            }
                            gw.data[i] = v
                                .row(i)
                                .iter()
                                .zip(&mean.data)
                                .zip(&g.data)
                                .map(|((x, m), d)| (x - m) * d)
                                .sum::<f64>()
                                / total;
                        }
                    } else {
                        for i in 0..v.rows {
                            for (o, d) in gv.row_mut(i).iter_mut().zip(&g.data) {
                                *o = d / v.rows as f64;
                            }
                        }
                    }
                    acc(&mut grads, *values, gv);
                    acc(&mut grads, *weights, gw);
                }
                Op::BceWithLogits(a, targets) => {
                    let z = self.value(*a);
                    let n = targets.len() as f64;
                    let ga = Tensor::from_vec(
                        z.rows,
                        z.cols,
                        z.data.iter().zip(targets).map(|(z, y)| g.data[0] * (sigmoid(*z) - y) / n).collect(),
                    );
                    acc(&mut grads, *a, ga);
                }
                Op::Huber(a, target, delta) => {
                    let x = self.value(*a);
                    let ga = Tensor::from_vec(
                        x.rows,
                        x.cols,
                        x.data
                            .iter()
                            .zip(&target.data)
                            .map(|(p, q)| g.data[0] * (p - q).clamp(-delta, *delta))
                            .collect(),
                    );
                    acc(&mut grads, *a, ga);
                }
                Op::SquaredError(a, target) => {
                    let x = self.value(*a);
                    let ga = Tensor::from_vec(
                        x.rows,
                        x.cols,
                        x.data.iter().zip(&target.data).map(|(p, q)| g.data[0] * 2.0 * (p - q)).collect(),
                    );
                    acc(&mut grads, *a, ga);
                }
            }
        }
        out
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn huber(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a <= delta {
        0.5 * r * r
    } else {
        delta * (a - 0.5 * delta)
    }
}

pub fn softmax_rows(t: &Tensor) -> Tensor {
    let mut v = t.clone();
    for i in 0..v.rows {
        let r = v.row_mut(i);
        let m = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for x in r.iter_mut() {
            *x = (*x - m).exp();
            s += *x;
        }
        for x in r.iter_mut() {
            *x /= s;
        }
    }
    v
}
