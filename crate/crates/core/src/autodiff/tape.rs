use std::collections::BTreeMap;

use super::tensor::{gemm, gemm_nt, gemm_tn};
use super::{Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

/// Index of a trainable parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    /// `x (n×c) + b (1×c)`
    AddRow(Var, Var),
    /// `x (n×c) * w (n×1)`, column broadcast.
    MulCol(Var, Var),
    AbsDiff(Var, Var),
    Abs(Var),
    Scale(Var, f64),
    AddScalar(Var),
    LeakyRelu(Var, f64),
    Elu(Var),
    Sigmoid(Var),
    Relu(Var),
    Clamp(Var, f64, f64),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    SegmentSum(Var, Vec<usize>),
    SegmentMean(Var, Vec<usize>, Vec<usize>),
    /// Saved argmax row per (segment, column).
    SegmentMax(Var, Vec<usize>),
    SegmentSoftmax(Var, Vec<usize>),
    RowDot(Var, Var),
    RowNorm(Var),
    Dot(Var, Var),
    Norm(Var),
    Sum(Var),
    Mean(Var),
    /// Per-head dot products: `x (n×H·d)`, `a (H×d)` → `n×H`.
    HeadDot(Var, Var),
    /// Per-head scaling: `x (n×H·d)`, `w (n×H)` → `n×H·d`.
    HeadScale(Var, Var),
    /// `log(1 + Σ exp(x))` → 1×1.
    Log1pSumExp(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients of a scalar root with respect to every parameter leaf.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    grads: BTreeMap<ParamId, Tensor>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.grads.iter().map(|(k, v)| (*k, v))
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn insert(&mut self, id: ParamId, grad: Tensor) {
        self.grads.insert(id, grad);
    }

    /// Adds `other` into `self` (summation merge across tapes).
    pub fn accumulate(&mut self, other: &Gradients) {
        for (id, g) in &other.grads {
            match self.grads.get_mut(id) {
                Some(mine) => mine.add_assign(g),
                None => {
                    self.grads.insert(*id, g.clone());
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.grads.values_mut() {
            g.scale_in_place(factor);
        }
    }

    /// Global L2 norm over all gradient tensors, ascending `ParamId` order.
    pub fn global_norm(&self) -> f64 {
        self.grads
            .values()
            .map(Tensor::squared_norm)
            .sum::<f64>()
            .sqrt()
    }
}

/// Single-owner record of a forward computation.
///
/// Every operation appends a node; [`Tape::backward`] walks the nodes in
/// reverse insertion order, which is a valid reverse topological order.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn matrix(&self, v: Var) -> Result<(usize, usize), TensorError> {
        self.value(v).dims2()
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var, TensorError> {
        value.dims2()?;
        Ok(self.push(value, Op::Constant))
    }

    /// Records a trainable leaf whose gradient is reported under `id`.
    pub fn param(&mut self, id: ParamId, value: Tensor) -> Result<Var, TensorError> {
        value.dims2()?;
        Ok(self.push(value, Op::Param(id)))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, k) = self.matrix(a)?;
        let (k2, n) = self.matrix(b)?;
        if k != k2 {
            return Err(mismatch("matmul", self.value(a), self.value(b)));
        }
        let out = gemm(m, k, n, self.value(a).data(), self.value(b).data());
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b)))
    }

    fn zip_same(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, TensorError> {
        let (x, y) = (self.value(a), self.value(b));
        x.dims2()?;
        if x.shape() != y.shape() {
            return Err(mismatch(name, x, y));
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(out, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_same("add", a, b, |p, q| p + q, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_same("sub", a, b, |p, q| p - q, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_same("mul", a, b, |p, q| p * q, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_same("div", a, b, |p, q| p / q, Op::Div(a, b))
    }

    pub fn abs_diff(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_same("abs_diff", a, b, |p, q| (p - q).abs(), Op::AbsDiff(a, b))
    }

    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var, TensorError> {
        let (n, c) = self.matrix(x)?;
        let (br, bc) = self.matrix(bias)?;
        if br != 1 || bc != c {
            return Err(mismatch("add_row", self.value(x), self.value(bias)));
        }
        let b = self.value(bias).data().to_vec();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(c.max(1)).take(n) {
            for (o, bv) in row.iter_mut().zip(&b) {
                *o += bv;
            }
        }
        Ok(self.push(Tensor::matrix(n, c, out)?, Op::AddRow(x, bias)))
    }

    pub fn mul_col(&mut self, x: Var, w: Var) -> Result<Var, TensorError> {
        let (n, c) = self.matrix(x)?;
        let (wr, wc) = self.matrix(w)?;
        if wr != n || wc != 1 {
            return Err(mismatch("mul_col", self.value(x), self.value(w)));
        }
        let wv = self.value(w).data();
        let xv = self.value(x).data();
        let mut out = vec![0.0; n * c];
        for i in 0..n {
            for j in 0..c {
                out[i * c + j] = xv[i * c + j] * wv[i];
            }
        }
        Ok(self.push(Tensor::matrix(n, c, out)?, Op::MulCol(x, w)))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var, TensorError> {
        self.matrix(x)?;
        let out = self.value(x).map(f);
        Ok(self.push(out, op))
    }

    pub fn abs(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary(x, f64::abs, Op::Abs(x))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var, TensorError> {
        self.unary(x, |v| v * factor, Op::Scale(x, factor))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var, TensorError> {
        self.unary(x, |v| v + c, Op::AddScalar(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var, TensorError> {
        self.unary(
            x,
            |v| if v > 0.0 { v } else { slope * v },
            Op::LeakyRelu(x, slope),
        )
    }

    pub fn elu(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary(x, |v| if v > 0.0 { v } else { v.exp_m1() }, Op::Elu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var, TensorError> {
        self.unary(x, |v| v.clamp(lo, hi), Op::Clamp(x, lo, hi))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let Some(&first) = parts.first() else {
            return Err(TensorError::Empty("concat_cols"));
        };
        let (n, _) = self.matrix(first)?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.matrix(p)?;
            if r != n {
                return Err(mismatch("concat_cols", self.value(first), self.value(p)));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for i in 0..n {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        Ok(self.push(Tensor::matrix(n, total, out)?, Op::ConcatCols(parts.to_vec())))
    }

    /// Columns `[start, end)` of `x`.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var, TensorError> {
        let (n, c) = self.matrix(x)?;
        if start > end || end > c {
            return Err(TensorError::OutOfRange {
                op: "slice_cols",
                index: end,
                bound: c,
            });
        }
        let w = end - start;
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(n * w);
        for i in 0..n {
            out.extend_from_slice(&xv[i * c + start..i * c + end]);
        }
        Ok(self.push(Tensor::matrix(n, w, out)?, Op::SliceCols(x, start)))
    }

    /// Splits `x` column-wise into blocks of the given widths.
    pub fn split_cols(&mut self, x: Var, widths: &[usize]) -> Result<Vec<Var>, TensorError> {
        let (_, c) = self.matrix(x)?;
        if widths.iter().sum::<usize>() != c {
            return Err(TensorError::ShapeMismatch {
                op: "split_cols",
                left: self.value(x).shape().to_vec(),
                right: widths.to_vec(),
            });
        }
        let mut start = 0;
        let mut out = Vec::with_capacity(widths.len());
        for &w in widths {
            out.push(self.slice_cols(x, start, start + w)?);
            start += w;
        }
        Ok(out)
    }

    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var, TensorError> {
        let (n, c) = self.matrix(x)?;
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(index.len() * c);
        for &i in index {
            if i >= n {
                return Err(TensorError::OutOfRange {
                    op: "gather_rows",
                    index: i,
                    bound: n,
                });
            }
            out.extend_from_slice(&xv[i * c..(i + 1) * c]);
        }
        let t = Tensor::matrix(index.len(), c, out)?;
        Ok(self.push(t, Op::GatherRows(x, index.to_vec())))
    }

    fn check_segments(
        &self,
        op: &'static str,
        x: Var,
        segments: &[usize],
        count: usize,
    ) -> Result<(usize, usize), TensorError> {
        let (n, c) = self.matrix(x)?;
        if segments.len() != n {
            return Err(TensorError::ShapeMismatch {
                op,
                left: self.value(x).shape().to_vec(),
                right: vec![segments.len()],
            });
        }
        if let Some(&bad) = segments.iter().find(|&&s| s >= count) {
            return Err(TensorError::OutOfRange {
                op,
                index: bad,
                bound: count,
            });
        }
        Ok((n, c))
    }

    /// Row `i` of `x` is added into output row `segments[i]`.
    pub fn segment_sum(
        &mut self,
        x: Var,
        segments: &[usize],
        count: usize,
    ) -> Result<Var, TensorError> {
        let (n, c) = self.check_segments("segment_sum", x, segments, count)?;
        let xv = self.value(x).data();
        let mut out = vec![0.0; count * c];
        for i in 0..n {
            let s = segments[i];
            for j in 0..c {
                out[s * c + j] += xv[i * c + j];
            }
        }
        let t = Tensor::matrix(count, c, out)?;
        Ok(self.push(t, Op::SegmentSum(x, segments.to_vec())))
    }

    /// Empty segments produce zero rows.
    pub fn segment_mean(
        &mut self,
        x: Var,
        segments: &[usize],
        count: usize,
    ) -> Result<Var, TensorError> {
        let (n, c) = self.check_segments("segment_mean", x, segments, count)?;
        let mut sizes = vec![0usize; count];
        for &s in segments {
            sizes[s] += 1;
        }
        let xv = self.value(x).data();
        let mut out = vec![0.0; count * c];
        for i in 0..n {
            let s = segments[i];
            for j in 0..c {
                out[s * c + j] += xv[i * c + j];
            }
        }
        for s in 0..count {
            if sizes[s] > 0 {
                let inv = 1.0 / sizes[s] as f64;
                for v in &mut out[s * c..(s + 1) * c] {
                    *v *= inv;
                }
            }
        }
        let t = Tensor::matrix(count, c, out)?;
        Ok(self.push(t, Op::SegmentMean(x, segments.to_vec(), sizes)))
    }

    /// Column-wise maximum per segment; every segment must be nonempty.
    pub fn segment_max(
        &mut self,
        x: Var,
        segments: &[usize],
        count: usize,
    ) -> Result<Var, TensorError> {
        let (n, c) = self.check_segments("segment_max", x, segments, count)?;
        let xv = self.value(x).data();
        let mut arg = vec![usize::MAX; count * c];
        for i in 0..n {
            let s = segments[i];
            for j in 0..c {
                let slot = &mut arg[s * c + j];
                if *slot == usize::MAX || xv[i * c + j] > xv[*slot * c + j] {
                    *slot = i;
                }
            }
        }
        if let Some(pos) = arg.iter().position(|&a| a == usize::MAX) {
            return Err(TensorError::EmptySegment {
                op: "segment_max",
                segment: pos / c.max(1),
            });
        }
        let out = (0..count * c).map(|p| xv[arg[p] * c + p % c]).collect();
        let t = Tensor::matrix(count, c, out)?;
        Ok(self.push(t, Op::SegmentMax(x, arg)))
    }

    /// Softmax over the rows of each segment, independently per column.
    pub fn segment_softmax(
        &mut self,
        x: Var,
        segments: &[usize],
        count: usize,
    ) -> Result<Var, TensorError> {
        let (n, c) = self.check_segments("segment_softmax", x, segments, count)?;
        let xv = self.value(x).data();
        let mut maxes = vec![f64::NEG_INFINITY; count * c];
        let mut seen = vec![false; count];
        for i in 0..n {
            let s = segments[i];
            seen[s] = true;
            for j in 0..c {
                let m = &mut maxes[s * c + j];
                *m = m.max(xv[i * c + j]);
            }
        }
        if let Some(empty) = seen.iter().position(|&s| !s) {
            return Err(TensorError::EmptySegment {
                op: "segment_softmax",
                segment: empty,
            });
        }
        let mut out = vec![0.0; n * c];
        let mut totals = vec![0.0; count * c];
        for i in 0..n {
            let s = segments[i];
            for j in 0..c {
                let e = (xv[i * c + j] - maxes[s * c + j]).exp();
                out[i * c + j] = e;
                totals[s * c + j] += e;
            }
        }
        for i in 0..n {
            let s = segments[i];
            for j in 0..c {
                out[i * c + j] /= totals[s * c + j];
            }
        }
        let t = Tensor::matrix(n, c, out)?;
        Ok(self.push(t, Op::SegmentSoftmax(x, segments.to_vec())))
    }

    /// Row-wise inner products → n×1.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (n, c) = self.matrix(a)?;
        if self.value(a).shape() != self.value(b).shape() {
            return Err(mismatch("row_dot", self.value(a), self.value(b)));
        }
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let out = (0..n)
            .map(|i| (0..c).map(|j| av[i * c + j] * bv[i * c + j]).sum())
            .collect();
        Ok(self.push(Tensor::column(out), Op::RowDot(a, b)))
    }

    /// Row-wise Euclidean norms → n×1.
    pub fn row_norm(&mut self, x: Var) -> Result<Var, TensorError> {
        let (n, c) = self.matrix(x)?;
        let xv = self.value(x).data();
        let out = (0..n)
            .map(|i| xv[i * c..(i + 1) * c].iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        Ok(self.push(Tensor::column(out), Op::RowNorm(x)))
    }

    /// Full inner product of two same-shape tensors → 1×1.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.matrix(a)?;
        if self.value(a).shape() != self.value(b).shape() {
            return Err(mismatch("dot", self.value(a), self.value(b)));
        }
        let s = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(p, q)| p * q)
            .sum();
        Ok(self.push(Tensor::scalar(s), Op::Dot(a, b)))
    }

    /// Euclidean norm of all entries → 1×1.
    pub fn l2_norm(&mut self, x: Var) -> Result<Var, TensorError> {
        self.matrix(x)?;
        let s = self.value(x).squared_norm().sqrt();
        Ok(self.push(Tensor::scalar(s), Op::Norm(x)))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, TensorError> {
        self.matrix(x)?;
        let s = self.value(x).sum();
        Ok(self.push(Tensor::scalar(s), Op::Sum(x)))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, TensorError> {
        self.matrix(x)?;
        let t = self.value(x);
        if t.is_empty() {
            return Err(TensorError::Empty("mean"));
        }
        let s = t.sum() / t.len() as f64;
        Ok(self.push(Tensor::scalar(s), Op::Mean(x)))
    }

    pub fn head_dot(&mut self, x: Var, a: Var) -> Result<Var, TensorError> {
        let (n, c) = self.matrix(x)?;
        let (heads, d) = self.matrix(a)?;
        if heads * d != c {
            return Err(mismatch("head_dot", self.value(x), self.value(a)));
        }
        let (xv, av) = (self.value(x).data(), self.value(a).data());
        let mut out = vec![0.0; n * heads];
        for i in 0..n {
            for k in 0..heads {
                let row = &xv[i * c + k * d..i * c + (k + 1) * d];
                let att = &av[k * d..(k + 1) * d];
                out[i * heads + k] = row.iter().zip(att).map(|(p, q)| p * q).sum();
            }
        }
        Ok(self.push(Tensor::matrix(n, heads, out)?, Op::HeadDot(x, a)))
    }

    pub fn head_scale(&mut self, x: Var, w: Var) -> Result<Var, TensorError> {
        let (n, c) = self.matrix(x)?;
        let (wn, heads) = self.matrix(w)?;
        if wn != n || heads == 0 || c % heads != 0 {
            return Err(mismatch("head_scale", self.value(x), self.value(w)));
        }
        let d = c / heads;
        let (xv, wv) = (self.value(x).data(), self.value(w).data());
        let mut out = vec![0.0; n * c];
        for i in 0..n {
            for k in 0..heads {
                let scale = wv[i * heads + k];
                for j in k * d..(k + 1) * d {
                    out[i * c + j] = xv[i * c + j] * scale;
                }
            }
        }
        Ok(self.push(Tensor::matrix(n, c, out)?, Op::HeadScale(x, w)))
    }

    /// `log(1 + Σᵢ exp(xᵢ))`, shifted by the running maximum for stability.
    pub fn log1p_sum_exp(&mut self, x: Var) -> Result<Var, TensorError> {
        self.matrix(x)?;
        let xv = self.value(x).data();
        let m = xv.iter().copied().fold(0.0_f64, f64::max);
        let total = (-m).exp() + xv.iter().map(|v| (v - m).exp()).sum::<f64>();
        let s = m + total.ln();
        Ok(self.push(Tensor::scalar(s), Op::Log1pSumExp(x)))
    }

    /// Reverse pass from a one-element root.
    pub fn backward(&self, root: Var) -> Result<Gradients, TensorError> {
        let root_value = self.value(root);
        if root_value.len() != 1 {
            return Err(TensorError::NotScalar(root_value.shape().to_vec()));
        }
        let mut adj: Vec<Option<Tensor>> = Vec::with_capacity(root.0 + 1);
        adj.resize_with(root.0 + 1, || None);
        adj[root.0] = Some(Tensor::new(root_value.shape().to_vec(), vec![1.0])?);

        let mut out = Gradients::default();
        for idx in (0..=root.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => match out.grads.get_mut(id) {
                    Some(acc) => acc.add_assign(&g),
                    None => {
                        out.grads.insert(*id, g);
                    }
                },
                op => self.propagate(op, &node.value, &g, &mut adj),
            }
        }
        Ok(out)
    }

    fn propagate(&self, op: &Op, y: &Tensor, g: &Tensor, adj: &mut [Option<Tensor>]) {
        let mut send = |v: Var, t: Tensor| match &mut adj[v.0] {
            Some(acc) => acc.add_assign(&t),
            slot @ None => *slot = Some(t),
        };
        let gv = g.data();
        match op {
            Op::Constant | Op::Param(_) => unreachable!(),
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = av.rows_cols();
                let (_, n) = bv.rows_cols();
                let da = gemm_nt(m, n, k, gv, bv.data());
                let db = gemm_tn(k, m, n, av.data(), gv);
                send(*a, Tensor::matrix(m, k, da).unwrap());
                send(*b, Tensor::matrix(k, n, db).unwrap());
            }
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::Sub(a, b) => {
                send(*a, g.clone());
                send(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                send(*a, zip_map(g, bv, |gi, bi| gi * bi));
                send(*b, zip_map(g, av, |gi, ai| gi * ai));
            }
            Op::Div(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                send(*a, zip_map(g, bv, |gi, bi| gi / bi));
                let db = g
                    .data()
                    .iter()
                    .zip(av.data())
                    .zip(bv.data())
                    .map(|((gi, ai), bi)| -gi * ai / (bi * bi))
                    .collect();
                send(*b, Tensor::new(bv.shape().to_vec(), db).unwrap());
            }
            Op::AddRow(x, b) => {
                let (n, c) = g.rows_cols();
                let mut db = vec![0.0; c];
                for i in 0..n {
                    for j in 0..c {
                        db[j] += gv[i * c + j];
                    }
                }
                send(*x, g.clone());
                send(*b, Tensor::row(db));
            }
            Op::MulCol(x, w) => {
                let (n, c) = g.rows_cols();
                let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                let mut dx = vec![0.0; n * c];
                let mut dw = vec![0.0; n];
                for i in 0..n {
                    for j in 0..c {
                        dx[i * c + j] = gv[i * c + j] * wv[i];
                        dw[i] += gv[i * c + j] * xv[i * c + j];
                    }
                }
                send(*x, Tensor::matrix(n, c, dx).unwrap());
                send(*w, Tensor::column(dw));
            }
            Op::AbsDiff(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let sign: Vec<f64> = av
                    .iter()
                    .zip(bv)
                    .zip(gv)
                    .map(|((p, q), gi)| gi * sign_of(p - q))
                    .collect();
                let neg = sign.iter().map(|v| -v).collect();
                send(*a, Tensor::new(g.shape().to_vec(), sign).unwrap());
                send(*b, Tensor::new(g.shape().to_vec(), neg).unwrap());
            }
            Op::Abs(x) => {
                let xv = self.value(*x);
                send(*x, zip_map(g, xv, |gi, xi| gi * sign_of(xi)));
            }
            Op::Scale(x, f) => send(*x, g.map(|v| v * f)),
            Op::AddScalar(x) => send(*x, g.clone()),
            Op::LeakyRelu(x, slope) => {
                let xv = self.value(*x);
                send(*x, zip_map(g, xv, |gi, xi| if xi > 0.0 { gi } else { gi * slope }));
            }
            Op::Elu(x) => {
                let xv = self.value(*x);
                let d = xv
                    .data()
                    .iter()
                    .zip(y.data())
                    .zip(gv)
                    .map(|((xi, yi), gi)| if *xi > 0.0 { *gi } else { gi * (yi + 1.0) })
                    .collect();
                send(*x, Tensor::new(g.shape().to_vec(), d).unwrap());
            }
            Op::Sigmoid(x) => send(*x, zip_map(g, y, |gi, yi| gi * yi * (1.0 - yi))),
            Op::Relu(x) => {
                let xv = self.value(*x);
                send(*x, zip_map(g, xv, |gi, xi| if xi > 0.0 { gi } else { 0.0 }));
            }
            Op::Clamp(x, lo, hi) => {
                let xv = self.value(*x);
                send(
                    *x,
                    zip_map(g, xv, |gi, xi| if xi >= *lo && xi <= *hi { gi } else { 0.0 }),
                );
            }
            Op::ConcatCols(parts) => {
                let (n, total) = g.rows_cols();
                let mut offset = 0;
                for &p in parts {
                    let (_, w) = self.value(p).rows_cols();
                    let mut d = Vec::with_capacity(n * w);
                    for i in 0..n {
                        d.extend_from_slice(&gv[i * total + offset..i * total + offset + w]);
                    }
                    send(p, Tensor::matrix(n, w, d).unwrap());
                    offset += w;
                }
            }
            Op::SliceCols(x, start) => {
                let (n, c) = self.value(*x).rows_cols();
                let (_, w) = g.rows_cols();
                let mut d = vec![0.0; n * c];
                for i in 0..n {
                    d[i * c + start..i * c + start + w].copy_from_slice(&gv[i * w..(i + 1) * w]);
                }
                send(*x, Tensor::matrix(n, c, d).unwrap());
            }
            Op::GatherRows(x, index) => {
                let (n, c) = self.value(*x).rows_cols();
                let mut d = vec![0.0; n * c];
                for (r, &i) in index.iter().enumerate() {
                    for j in 0..c {
                        d[i * c + j] += gv[r * c + j];
                    }
                }
                send(*x, Tensor::matrix(n, c, d).unwrap());
            }
            Op::SegmentSum(x, segments) => {
                let (n, c) = self.value(*x).rows_cols();
                let mut d = Vec::with_capacity(n * c);
                for &s in segments {
                    d.extend_from_slice(&gv[s * c..(s + 1) * c]);
                }
                send(*x, Tensor::matrix(n, c, d).unwrap());
            }
            Op::SegmentMean(x, segments, sizes) => {
                let (n, c) = self.value(*x).rows_cols();
                let mut d = Vec::with_capacity(n * c);
                for &s in segments {
                    let inv = 1.0 / sizes[s] as f64;
                    d.extend(gv[s * c..(s + 1) * c].iter().map(|v| v * inv));
                }
                send(*x, Tensor::matrix(n, c, d).unwrap());
            }
            Op::SegmentMax(x, arg) => {
                let (n, c) = self.value(*x).rows_cols();
                let mut d = vec![0.0; n * c];
                for (p, &row) in arg.iter().enumerate() {
                    d[row * c + p % c] += gv[p];
                }
                send(*x, Tensor::matrix(n, c, d).unwrap());
            }
            Op::SegmentSoftmax(x, segments) => {
                let (n, c) = y.rows_cols();
                let count = segments.iter().max().map_or(0, |m| m + 1);
                let yv = y.data();
                let mut inner = vec![0.0; count * c];
                for i in 0..n {
                    let s = segments[i];
                    for j in 0..c {
                        inner[s * c + j] += yv[i * c + j] * gv[i * c + j];
                    }
                }
                let mut d = vec![0.0; n * c];
                for i in 0..n {
                    let s = segments[i];
                    for j in 0..c {
                        d[i * c + j] = yv[i * c + j] * (gv[i * c + j] - inner[s * c + j]);
                    }
                }
                send(*x, Tensor::matrix(n, c, d).unwrap());
            }
            Op::RowDot(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (n, c) = av.rows_cols();
                let mut da = vec![0.0; n * c];
                let mut db = vec![0.0; n * c];
                for i in 0..n {
                    for j in 0..c {
                        da[i * c + j] = gv[i] * bv.data()[i * c + j];
                        db[i * c + j] = gv[i] * av.data()[i * c + j];
                    }
                }
                send(*a, Tensor::matrix(n, c, da).unwrap());
                send(*b, Tensor::matrix(n, c, db).unwrap());
            }
            Op::RowNorm(x) => {
                let xv = self.value(*x);
                let (n, c) = xv.rows_cols();
                let mut d = vec![0.0; n * c];
                for i in 0..n {
                    let norm = y.data()[i];
                    if norm > 0.0 {
                        for j in 0..c {
                            d[i * c + j] = gv[i] * xv.data()[i * c + j] / norm;
                        }
                    }
                }
                send(*x, Tensor::matrix(n, c, d).unwrap());
            }
            Op::Dot(a, b) => {
                let s = gv[0];
                let (av, bv) = (self.value(*a), self.value(*b));
                send(*a, bv.map(|v| v * s));
                send(*b, av.map(|v| v * s));
            }
            Op::Norm(x) => {
                let norm = y.data()[0];
                let s = gv[0];
                let xv = self.value(*x);
                if norm > 0.0 {
                    send(*x, xv.map(|v| s * v / norm));
                } else {
                    send(*x, Tensor::zeros_like(xv));
                }
            }
            Op::Sum(x) => {
                let xv = self.value(*x);
                let s = gv[0];
                send(*x, xv.map(|_| s));
            }
            Op::Mean(x) => {
                let xv = self.value(*x);
                let s = gv[0] / xv.len() as f64;
                send(*x, xv.map(|_| s));
            }
            Op::HeadDot(x, a) => {
                let (xv, av) = (self.value(*x), self.value(*a));
                let (n, c) = xv.rows_cols();
                let (heads, d) = av.rows_cols();
                let mut dx = vec![0.0; n * c];
                let mut da = vec![0.0; heads * d];
                for i in 0..n {
                    for k in 0..heads {
                        let gik = gv[i * heads + k];
                        for t in 0..d {
                            let col = k * d + t;
                            dx[i * c + col] = gik * av.data()[k * d + t];
                            da[k * d + t] += gik * xv.data()[i * c + col];
                        }
                    }
                }
                send(*x, Tensor::matrix(n, c, dx).unwrap());
                send(*a, Tensor::matrix(heads, d, da).unwrap());
            }
            Op::HeadScale(x, w) => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (n, c) = xv.rows_cols();
                let (_, heads) = wv.rows_cols();
                let d = c / heads;
                let mut dx = vec![0.0; n * c];
                let mut dw = vec![0.0; n * heads];
                for i in 0..n {
                    for k in 0..heads {
                        let scale = wv.data()[i * heads + k];
                        let mut acc = 0.0;
                        for j in k * d..(k + 1) * d {
                            dx[i * c + j] = gv[i * c + j] * scale;
                            acc += gv[i * c + j] * xv.data()[i * c + j];
                        }
                        dw[i * heads + k] = acc;
                    }
                }
                send(*x, Tensor::matrix(n, c, dx).unwrap());
                send(*w, Tensor::matrix(n, heads, dw).unwrap());
            }
            Op::Log1pSumExp(x) => {
                let s = gv[0];
                let lse = y.data()[0];
                let xv = self.value(*x);
                send(*x, xv.map(|v| s * (v - lse).exp()));
            }
        }
    }
}

fn sign_of(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn zip_map(g: &Tensor, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = g
        .data()
        .iter()
        .zip(other.data())
        .map(|(&a, &b)| f(a, b))
        .collect();
    Tensor::new(g.shape().to_vec(), data).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn product_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(ParamId(0), Tensor::scalar(2.0)).unwrap();
        let y = tape.param(ParamId(1), Tensor::scalar(3.0)).unwrap();
        let z = tape.mul(x, y).unwrap();
        let g = tape.backward(z).unwrap();
        assert_eq!(g.get(ParamId(0)).unwrap().data(), &[3.0]);
        assert_eq!(g.get(ParamId(1)).unwrap().data(), &[2.0]);
    }

    #[test]
    fn norm_gradient_is_unit_vector() {
        let mut tape = Tape::new();
        let x = tape.param(ParamId(0), Tensor::row(vec![3.0, -4.0])).unwrap();
        let n = tape.l2_norm(x).unwrap();
        assert_eq!(tape.value(n).item().unwrap(), 5.0);
        let g = tape.backward(n).unwrap();
        let d = g.get(ParamId(0)).unwrap().data();
        assert!(close(d[0], 0.6, 1e-15) && close(d[1], -0.8, 1e-15));
    }

    #[test]
    fn symmetric_segment_softmax_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::column(vec![1.7, 1.7])).unwrap();
        let y = tape.segment_softmax(x, &[0, 0], 1).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn empty_softmax_segment_is_an_error() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::column(vec![1.0, 2.0])).unwrap();
        let err = tape.segment_softmax(x, &[0, 2], 3).unwrap_err();
        assert!(matches!(err, TensorError::EmptySegment { segment: 1, .. }));
    }

    #[test]
    fn abs_diff_of_equal_inputs_is_zero() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row(vec![0.3, -2.0, 7.5])).unwrap();
        let d = tape.abs_diff(x, x).unwrap();
        assert!(tape.value(d).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_mismatch_reports_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(2, 3)).unwrap();
        let b = tape.constant(Tensor::zeros(2, 3)).unwrap();
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn backward_requires_scalar_root() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(2, 1)).unwrap();
        assert!(matches!(tape.backward(a), Err(TensorError::NotScalar(_))));
    }

    #[test]
    fn log1p_sum_exp_is_stable() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::column(vec![800.0, 800.0])).unwrap();
        let y = tape.log1p_sum_exp(x).unwrap();
        let v = tape.value(y).item().unwrap();
        assert!(close(v, 800.0 + 2f64.ln(), 1e-9));
        let empty = tape.constant(Tensor::zeros(0, 1)).unwrap();
        let z = tape.log1p_sum_exp(empty).unwrap();
        assert_eq!(tape.value(z).item().unwrap(), 0.0);
    }

    #[test]
    fn shared_leaf_accumulates() {
        let mut tape = Tape::new();
        let x = tape.param(ParamId(0), Tensor::scalar(1.5)).unwrap();
        let x2 = tape.param(ParamId(0), Tensor::scalar(1.5)).unwrap();
        let s = tape.add(x, x2).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(ParamId(0)).unwrap().data(), &[2.0]);
    }
}
