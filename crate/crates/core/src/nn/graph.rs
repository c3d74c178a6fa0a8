//! A small reverse-mode autodiff tape over dense `f64` matrices.
//!
//! Every forward operation appends a node to the [`Graph`]; [`Graph::backward`]
//! walks the tape in reverse and returns gradients for the parameters that
//! were read during the forward pass. The tape is built per example, so
//! independent examples can be processed against the same read-only
//! [`ParamStore`].

use std::rc::Rc;

use ndarray::{s, Array2, Axis, Zip};

use super::params::{ParamId, ParamStore};

pub type Mat = Array2<f64>;

/// Additive logit penalty for masked attention entries.
pub const MASK_PENALTY: f64 = -1e9;

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Value<'p> {
    Owned(Mat),
    Borrowed(&'p Mat),
}

impl Value<'_> {
    fn get(&self) -> &Mat {
        match self {
            Value::Owned(m) => m,
            Value::Borrowed(m) => m,
        }
    }
}

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    OneMinus(Var),
    Gelu(Var),
    Tanh(Var),
    MaskedSoftmax(Var),
    LayerNorm(Var, Rc<Vec<f64>>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Rc<[usize]>),
    ScatterAddRows(Var, Rc<[usize]>),
    MaxOf(Vec<Var>, Vec<u32>),
    SegmentSoftmax(Var, Rc<[usize]>),
    MulCol(Var, Var),
    RowBlockDot(Var, Var, usize),
    MaskRows(Var, Rc<[f64]>),
    Sum(Var),
    CrossEntropy(Var, Rc<[usize]>, Mat),
    BceWithLogits(Var, Rc<[f64]>),
}

struct Node<'p> {
    value: Value<'p>,
    op: Op,
}

/// Gradients of a scalar loss with respect to every parameter in a store.
/// Parameters the forward pass never touched hold `None`.
#[derive(Clone, Debug)]
pub struct Grads {
    pub by_param: Vec<Option<Mat>>,
}

impl Grads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Grads { by_param: vec![None; store.len()] }
    }

    pub fn get(&self, id: ParamId) -> Option<&Mat> {
        self.by_param[id.index()].as_ref()
    }

    /// Adds `other` into `self`, parameter by parameter.
    pub fn accumulate(&mut self, other: Grads) {
        for (slot, g) in self.by_param.iter_mut().zip(other.by_param) {
            match (slot.as_mut(), g) {
                (Some(acc), Some(g)) => *acc += &g,
                (None, Some(g)) => *slot = Some(g),
                _ => {}
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.by_param.iter_mut().flatten() {
            g.mapv_inplace(|v| v * factor);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.by_param.iter().flatten().map(|g| g.iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt()
    }
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node<'p>>,
    param_nodes: Vec<Option<Var>>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

const LN_EPS: f64 = 1e-5;

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Graph { params, nodes: Vec::with_capacity(256), param_nodes: vec![None; params.len()] }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value: Value::Owned(value), op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        self.nodes[v.0].value.get()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A constant input; receives no gradient.
    pub fn input(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Reads a parameter. Repeated reads within one graph share a node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes[id.index()] {
            return v;
        }
        self.nodes.push(Node { value: Value::Borrowed(self.params.value(id)), op: Op::Param(id) });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes[id.index()] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(&self.value(b).t());
        self.push(out, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) + self.value(b);
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) - self.value(b);
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) * self.value(b);
        self.push(out, Op::Mul(a, b))
    }

    /// Adds a `1×c` row vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let out = self.value(a) + self.value(row);
        self.push(out, Op::AddRow(a, row))
    }

    /// Multiplies every row of `a` elementwise by a `1×c` row vector.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let out = self.value(a) * self.value(row);
        self.push(out, Op::MulRow(a, row))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a) * factor;
        self.push(out, Op::Scale(a, factor))
    }

    /// Multiplies `a` by the `1×1` variable `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Var {
        let k = self.scalar(s);
        let out = self.value(a) * k;
        self.push(out, Op::ScaleBy(a, s))
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|v| 1.0 - v);
        self.push(out, Op::OneMinus(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(gelu);
        self.push(out, Op::Gelu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    /// Row softmax of `a + penalty`, where `penalty` holds `0` for visible
    /// entries and [`MASK_PENALTY`] for hidden ones. Rows whose entries are
    /// all hidden produce a zero row instead of a uniform distribution.
    pub fn masked_softmax(&mut self, a: Var, penalty: &Mat) -> Var {
        let x = self.value(a);
        assert_eq!(x.dim(), penalty.dim(), "mask shape mismatch");
        let mut out = x + penalty;
        for (mut row, pen) in out.outer_iter_mut().zip(penalty.outer_iter()) {
            if pen.iter().all(|&p| p <= MASK_PENALTY * 0.5) {
                row.fill(0.0);
                continue;
            }
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            row.mapv_inplace(|v| (v - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|v| v / sum);
        }
        self.push(out, Op::MaskedSoftmax(a))
    }

    /// Row-wise standardisation (no affine part).
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let cols = x.ncols() as f64;
        let mut out = x.clone();
        let mut inv_std = Vec::with_capacity(x.nrows());
        for mut row in out.outer_iter_mut() {
            let mean = row.sum() / cols;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|v| v * v).sum::<f64>() / cols;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            row.mapv_inplace(|v| v * inv);
            inv_std.push(inv);
        }
        self.push(out, Op::LayerNorm(a, Rc::new(inv_std)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row mismatch");
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push(out, Op::SliceCols(a, start))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice(s![start..start + len, ..]).to_owned();
        self.push(out, Op::SliceRows(a, start))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(0), &views).expect("concat_rows: col mismatch");
        self.push(out, Op::ConcatRows(parts.to_vec()))
    }

    /// `out[r] = a[idx[r]]`
    pub fn gather_rows(&mut self, a: Var, idx: impl Into<Rc<[usize]>>) -> Var {
        let idx = idx.into();
        let x = self.value(a);
        let mut out = Mat::zeros((idx.len(), x.ncols()));
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).assign(&x.row(i));
        }
        self.push(out, Op::GatherRows(a, idx))
    }

    /// `out[idx[r]] += a[r]`, with `out` having `rows` rows.
    pub fn scatter_add_rows(&mut self, a: Var, idx: impl Into<Rc<[usize]>>, rows: usize) -> Var {
        let idx = idx.into();
        let x = self.value(a);
        assert_eq!(idx.len(), x.nrows());
        let mut out = Mat::zeros((rows, x.ncols()));
        for (r, &i) in idx.iter().enumerate() {
            let mut dst = out.row_mut(i);
            dst += &x.row(r);
        }
        self.push(out, Op::ScatterAddRows(a, idx))
    }

    /// Elementwise maximum over equally shaped inputs.
    pub fn max_of(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let mut out = self.value(parts[0]).clone();
        let mut arg = vec![0u32; out.len()];
        for (k, &p) in parts.iter().enumerate().skip(1) {
            let x = self.value(p);
            assert_eq!(x.dim(), out.dim());
            for ((o, a), &v) in out.iter_mut().zip(arg.iter_mut()).zip(x.iter()) {
                if v > *o {
                    *o = v;
                    *a = k as u32;
                }
            }
        }
        self.push(out, Op::MaxOf(parts.to_vec(), arg))
    }

    /// Softmax of a column vector within groups: entries sharing
    /// `groups[i]` are normalised together.
    pub fn segment_softmax(&mut self, a: Var, groups: impl Into<Rc<[usize]>>) -> Var {
        let groups = groups.into();
        let x = self.value(a);
        assert_eq!(x.ncols(), 1);
        assert_eq!(x.nrows(), groups.len());
        let n_groups = groups.iter().copied().max().map_or(0, |m| m + 1);
        let mut max = vec![f64::NEG_INFINITY; n_groups];
        for (i, &g) in groups.iter().enumerate() {
            max[g] = max[g].max(x[[i, 0]]);
        }
        let mut out = Mat::zeros(x.dim());
        let mut sum = vec![0.0; n_groups];
        for (i, &g) in groups.iter().enumerate() {
            let e = (x[[i, 0]] - max[g]).exp();
            out[[i, 0]] = e;
            sum[g] += e;
        }
        for (i, &g) in groups.iter().enumerate() {
            out[[i, 0]] /= sum[g];
        }
        self.push(out, Op::SegmentSoftmax(a, groups))
    }

    /// Scales row `r` of `a` by `col[r, 0]`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let out = self.value(a) * self.value(col);
        self.push(out, Op::MulCol(a, col))
    }

    /// For `t` of shape `S×(k·m)` and `b` of shape `S×m`,
    /// `out[s, c] = Σ_j t[s, c·m + j] · b[s, j]`.
    pub fn row_block_dot(&mut self, t: Var, b: Var, k: usize) -> Var {
        let tv = self.value(t);
        let bv = self.value(b);
        let m = bv.ncols();
        assert_eq!(tv.ncols(), k * m);
        assert_eq!(tv.nrows(), bv.nrows());
        let mut out = Mat::zeros((tv.nrows(), k));
        for r in 0..tv.nrows() {
            let trow = tv.row(r);
            let brow = bv.row(r);
            for c in 0..k {
                out[[r, c]] = trow.slice(s![c * m..(c + 1) * m]).dot(&brow);
            }
        }
        self.push(out, Op::RowBlockDot(t, b, k))
    }

    /// Multiplies row `r` by the constant `factors[r]`.
    pub fn mask_rows(&mut self, a: Var, factors: impl Into<Rc<[f64]>>) -> Var {
        let factors = factors.into();
        let mut out = self.value(a).clone();
        for (mut row, &f) in out.outer_iter_mut().zip(factors.iter()) {
            if f != 1.0 {
                row.mapv_inplace(|v| v * f);
            }
        }
        self.push(out, Op::MaskRows(a, factors))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).sum();
        self.push(Mat::from_elem((1, 1), total), Op::Sum(a))
    }

    /// Summed softmax cross-entropy of each row of `logits` against the
    /// class index in `targets`.
    pub fn cross_entropy(&mut self, logits: Var, targets: impl Into<Rc<[usize]>>) -> Var {
        let targets = targets.into();
        let z = self.value(logits);
        assert_eq!(z.nrows(), targets.len());
        let probs = softmax_rows(z);
        let loss: f64 = targets.iter().enumerate().map(|(r, &t)| log_sum_exp(z.row(r)) - z[[r, t]]).sum();
        self.push(Mat::from_elem((1, 1), loss), Op::CrossEntropy(logits, targets, probs))
    }

    /// Mean binary cross-entropy of a `S×1` logit column against 0/1 targets.
    pub fn bce_with_logits(&mut self, logits: Var, targets: impl Into<Rc<[f64]>>) -> Var {
        let targets = targets.into();
        let z = self.value(logits);
        assert_eq!(z.ncols(), 1);
        assert_eq!(z.nrows(), targets.len());
        let n = targets.len().max(1) as f64;
        let loss: f64 =
            z.column(0).iter().zip(targets.iter()).map(|(&x, &y)| x.max(0.0) - x * y + (-x.abs()).exp().ln_1p()).sum::<f64>() / n;
        self.push(Mat::from_elem((1, 1), loss), Op::BceWithLogits(logits, targets))
    }

    /// Reverse pass from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Grads {
        assert_eq!(self.value(loss).dim(), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Mat>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(Mat::ones((1, 1)));
        let mut out = Grads { by_param: vec![None; self.params.len()] };

        for idx in (0..=loss.0).rev() {
            let Some(gy) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => {
                    let slot = &mut out.by_param[id.index()];
                    match slot {
                        Some(acc) => *acc += &gy,
                        None => *slot = Some(gy),
                    }
                }
                Op::MatMul(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    accumulate(&mut grads, *a, gy.dot(&bv.t()));
                    accumulate(&mut grads, *b, av.t().dot(&gy));
                }
                Op::MatMulT(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    accumulate(&mut grads, *a, gy.dot(bv));
                    accumulate(&mut grads, *b, gy.t().dot(av));
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, gy.clone());
                    accumulate(&mut grads, *a, gy);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, -&gy);
                    accumulate(&mut grads, *a, gy);
                }
                Op::Mul(a, b) => {
                    let ga = &gy * self.value(*b);
                    let gb = &gy * self.value(*a);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::AddRow(a, row) => {
                    let gr = gy.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads, *row, gr);
                    accumulate(&mut grads, *a, gy);
                }
                Op::MulRow(a, row) => {
                    let gr = (&gy * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let ga = &gy * self.value(*row);
                    accumulate(&mut grads, *row, gr);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Scale(a, f) => accumulate(&mut grads, *a, gy * *f),
                Op::ScaleBy(a, s) => {
                    let k = self.scalar(*s);
                    let gs = (&gy * self.value(*a)).sum();
                    accumulate(&mut grads, *s, Mat::from_elem((1, 1), gs));
                    accumulate(&mut grads, *a, gy * k);
                }
                Op::OneMinus(a) => accumulate(&mut grads, *a, -gy),
                Op::Gelu(a) => {
                    let mut g = gy;
                    Zip::from(&mut g).and(self.value(*a)).for_each(|g, &x| *g *= gelu_grad(x));
                    accumulate(&mut grads, *a, g);
                }
                Op::Tanh(a) => {
                    let mut g = gy;
                    Zip::from(&mut g).and(node.value.get()).for_each(|g, &y| *g *= 1.0 - y * y);
                    accumulate(&mut grads, *a, g);
                }
                Op::MaskedSoftmax(a) => {
                    let y = node.value.get();
                    let mut g = gy;
                    for (mut grow, yrow) in g.outer_iter_mut().zip(y.outer_iter()) {
                        let dot = grow.dot(&yrow);
                        Zip::from(&mut grow).and(&yrow).for_each(|g, &y| *g = y * (*g - dot));
                    }
                    accumulate(&mut grads, *a, g);
                }
                Op::LayerNorm(a, inv_std) => {
                    let y = node.value.get();
                    let cols = y.ncols() as f64;
                    let mut g = gy;
                    for ((mut grow, yrow), &inv) in g.outer_iter_mut().zip(y.outer_iter()).zip(inv_std.iter()) {
                        let mean_g = grow.sum() / cols;
                        let mean_gy = grow.dot(&yrow) / cols;
                        Zip::from(&mut grow).and(&yrow).for_each(|g, &yv| *g = inv * (*g - mean_g - yv * mean_gy));
                    }
                    accumulate(&mut grads, *a, g);
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        accumulate(&mut grads, p, gy.slice(s![.., start..start + w]).to_owned());
                        start += w;
                    }
                }
                Op::SliceCols(a, start) => {
                    let src = self.value(*a);
                    let mut g = Mat::zeros(src.dim());
                    g.slice_mut(s![.., *start..*start + gy.ncols()]).assign(&gy);
                    accumulate(&mut grads, *a, g);
                }
                Op::SliceRows(a, start) => {
                    let src = self.value(*a);
                    let mut g = Mat::zeros(src.dim());
                    g.slice_mut(s![*start..*start + gy.nrows(), ..]).assign(&gy);
                    accumulate(&mut grads, *a, g);
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let h = self.value(p).nrows();
                        accumulate(&mut grads, p, gy.slice(s![start..start + h, ..]).to_owned());
                        start += h;
                    }
                }
                Op::GatherRows(a, idx) => {
                    let src = self.value(*a);
                    let mut g = Mat::zeros(src.dim());
                    for (r, &i) in idx.iter().enumerate() {
                        let mut dst = g.row_mut(i);
                        dst += &gy.row(r);
                    }
                    accumulate(&mut grads, *a, g);
                }
                Op::ScatterAddRows(a, idx) => {
                    let mut g = Mat::zeros((idx.len(), gy.ncols()));
                    for (r, &i) in idx.iter().enumerate() {
                        g.row_mut(r).assign(&gy.row(i));
                    }
                    accumulate(&mut grads, *a, g);
                }
                Op::MaxOf(parts, arg) => {
                    let mut gs: Vec<Mat> = parts.iter().map(|_| Mat::zeros(gy.dim())).collect();
                    for ((flat, &g), &k) in (0..gy.len()).zip(gy.iter()).zip(arg.iter()) {
                        let (r, c) = (flat / gy.ncols(), flat % gy.ncols());
                        gs[k as usize][[r, c]] = g;
                    }
                    for (&p, g) in parts.iter().zip(gs) {
                        accumulate(&mut grads, p, g);
                    }
                }
                Op::SegmentSoftmax(a, groups) => {
                    let y = node.value.get();
                    let n_groups = groups.iter().copied().max().map_or(0, |m| m + 1);
                    let mut dot = vec![0.0; n_groups];
                    for (i, &gr) in groups.iter().enumerate() {
                        dot[gr] += gy[[i, 0]] * y[[i, 0]];
                    }
                    let mut g = Mat::zeros(y.dim());
                    for (i, &gr) in groups.iter().enumerate() {
                        g[[i, 0]] = y[[i, 0]] * (gy[[i, 0]] - dot[gr]);
                    }
                    accumulate(&mut grads, *a, g);
                }
                Op::MulCol(a, col) => {
                    let av = self.value(*a);
                    let cv = self.value(*col);
                    let gc = (&gy * av).sum_axis(Axis(1)).insert_axis(Axis(1));
                    let ga = &gy * cv;
                    accumulate(&mut grads, *col, gc);
                    accumulate(&mut grads, *a, ga);
                }
                Op::RowBlockDot(t, b, k) => {
                    let tv = self.value(*t);
                    let bv = self.value(*b);
                    let m = bv.ncols();
                    let mut gt = Mat::zeros(tv.dim());
                    let mut gb = Mat::zeros(bv.dim());
                    for r in 0..tv.nrows() {
                        for c in 0..*k {
                            let go = gy[[r, c]];
                            if go == 0.0 {
                                continue;
                            }
                            let mut gtr = gt.slice_mut(s![r, c * m..(c + 1) * m]);
                            gtr.scaled_add(go, &bv.row(r));
                            let mut gbr = gb.row_mut(r);
                            gbr.scaled_add(go, &tv.slice(s![r, c * m..(c + 1) * m]));
                        }
                    }
                    accumulate(&mut grads, *t, gt);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MaskRows(a, factors) => {
                    let mut g = gy;
                    for (mut row, &f) in g.outer_iter_mut().zip(factors.iter()) {
                        if f != 1.0 {
                            row.mapv_inplace(|v| v * f);
                        }
                    }
                    accumulate(&mut grads, *a, g);
                }
                Op::Sum(a) => {
                    let k = gy[[0, 0]];
                    let g = Mat::from_elem(self.value(*a).dim(), k);
                    accumulate(&mut grads, *a, g);
                }
                Op::CrossEntropy(logits, targets, probs) => {
                    let k = gy[[0, 0]];
                    let mut g = probs.clone();
                    for (r, &t) in targets.iter().enumerate() {
                        g[[r, t]] -= 1.0;
                    }
                    g.mapv_inplace(|v| v * k);
                    accumulate(&mut grads, *logits, g);
                }
                Op::BceWithLogits(logits, targets) => {
                    let k = gy[[0, 0]] / targets.len().max(1) as f64;
                    let z = self.value(*logits);
                    let mut g = Mat::zeros(z.dim());
                    for (r, &y) in targets.iter().enumerate() {
                        g[[r, 0]] = k * (sigmoid(z[[r, 0]]) - y);
                    }
                    accumulate(&mut grads, *logits, g);
                }
            }
        }
        out
    }
}

fn accumulate(grads: &mut [Option<Mat>], v: Var, g: Mat) {
    match &mut grads[v.0] {
        Some(acc) => *acc += &g,
        slot @ None => *slot = Some(g),
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

fn log_sum_exp(row: ndarray::ArrayView1<f64>) -> f64 {
    let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Numerically stable row softmax (no graph node).
pub fn softmax_rows(z: &Mat) -> Mat {
    let mut out = z.clone();
    for mut row in out.outer_iter_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

#[cfg(test)]
#[path = "graph_tests.rs"]
mod tests;
