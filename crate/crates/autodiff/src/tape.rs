//! The tape: forward op recording and the reverse sweep.

use crate::array::Array;
use crate::scalar::{exact_sum, exact_sum_slice, Scalar};
use crate::sparse::Sparse;
use crate::{AutodiffError, Result};
use rayon::prelude::*;
use std::sync::Arc;

/// Handle to a tape node. Only valid for the tape that produced it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub usize);

/// Below this many multiply-adds a matmul stays single-threaded.
const PAR_FLOP_THRESHOLD: usize = 1 << 16;

enum Op<S: Scalar> {
    Leaf,
    MatMul(Var, Var),
    SparseMatMul(Arc<Sparse<S>>, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Sub(Var, Var),
    Neg(Var),
    Mul(Var, Var),
    ScaleRows(Var, Var),
    MulScalar(Var, S),
    AddScalar(Var),
    Relu(Var),
    Elu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Abs(Var),
    Square(Var),
    Sqrt(Var),
    ConcatCols(Var, Var),
    GatherRows(Var, Arc<Vec<usize>>),
    ScatterAddRows(Var, Arc<Vec<usize>>),
    RowReplace {
        base: Var,
        rows: Arc<Vec<usize>>,
        repl: Var,
    },
    MaskedMaxPool {
        a: Var,
        gate: Var,
        argmax: Vec<usize>,
    },
    GroupNorm {
        a: Var,
        gamma: Var,
        beta: Var,
        groups: usize,
        mean: Vec<S>,
        rstd: Vec<S>,
    },
    NormalizeRows {
        a: Var,
        rnorm: Vec<S>,
    },
    CrossRows(Var, Var),
    SumRows(Var),
    SumCols(Var),
    SumAll(Var),
    MeanAll(Var),
    MinAll(Var, usize),
    Reshape(Var),
}

struct Node<S: Scalar> {
    value: Array<S>,
    op: Op<S>,
}

/// Gradients of a scalar root with respect to every tape node. Nodes the
/// root does not depend on hold no gradient.
pub struct Gradients<S: Scalar> {
    grads: Vec<Option<Array<S>>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient for `v`, or None when the root does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Array<S>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

/// Records a computation as a flat list of nodes.
pub struct Tape<S: Scalar> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops all nodes; existing Vars become invalid.
    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    pub fn value(&self, v: Var) -> &Array<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Array<S>, op: Op<S>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// An input node. Gradients are computed for it like any other node;
    /// whether it is a trainable parameter is the caller's business.
    pub fn leaf(&mut self, value: Array<S>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Same as `leaf`; reads as intent for values that never train.
    pub fn constant(&mut self, value: Array<S>) -> Var {
        self.leaf(value)
    }

    pub fn scalar(&mut self, value: S) -> Var {
        self.leaf(Array::scalar(value))
    }

    fn check_same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if (ar, ac) != (br, bc) {
            return Err(AutodiffError::Shape {
                op,
                detail: format!("({ar}, {ac}) vs ({br}, {bc})"),
            });
        }
        Ok(())
    }

    /// Dense product A B.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, ka) = self.shape(a);
        let (kb, n) = self.shape(b);
        if ka != kb {
            return Err(AutodiffError::Shape {
                op: "matmul",
                detail: format!("({m}, {ka}) x ({kb}, {n})"),
            });
        }
        let value = matmul_values(self.value(a), self.value(b));
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    /// Product M a for a constant sparse M.
    pub fn sparse_matmul(&mut self, m: Arc<Sparse<S>>, a: Var) -> Result<Var> {
        let value = m.matmul_dense(self.value(a)).map_err(|_| AutodiffError::Shape {
            op: "sparse_matmul",
            detail: format!(
                "({}, {}) x {:?}",
                m.n_rows,
                m.n_cols,
                self.shape(a)
            ),
        })?;
        Ok(self.push(value, Op::SparseMatMul(m, a)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape("add", a, b)?;
        let value = zip_values(self.value(a), self.value(b), |x, y| x + y);
        Ok(self.push(value, Op::Add(a, b)))
    }

    /// Adds a (1, C) bias row to every row of a (N, C) array.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (_, ac) = self.shape(a);
        let (br, bc) = self.shape(bias);
        if br != 1 || bc != ac {
            return Err(AutodiffError::Shape {
                op: "add_bias",
                detail: format!("{:?} + {:?}", self.shape(a), self.shape(bias)),
            });
        }
        let av = self.value(a);
        let bv = self.value(bias);
        let mut out = av.clone();
        for r in 0..out.rows {
            let row = out.row_mut(r);
            for (o, &b) in row.iter_mut().zip(&bv.data) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddBias(a, bias)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape("sub", a, b)?;
        let value = zip_values(self.value(a), self.value(b), |x, y| x - y);
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| -x);
        self.push(value, Op::Neg(a))
    }

    /// Elementwise product of same-shape arrays.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape("mul", a, b)?;
        let value = zip_values(self.value(a), self.value(b), |x, y| x * y);
        Ok(self.push(value, Op::Mul(a, b)))
    }

    /// Scales row r of a (N, C) array by s[r] where s is (N, 1).
    pub fn scale_rows(&mut self, a: Var, s: Var) -> Result<Var> {
        let (ar, _) = self.shape(a);
        let (sr, sc) = self.shape(s);
        if sr != ar || sc != 1 {
            return Err(AutodiffError::Shape {
                op: "scale_rows",
                detail: format!("{:?} scaled by {:?}", self.shape(a), self.shape(s)),
            });
        }
        let av = self.value(a);
        let sv = self.value(s);
        let mut out = av.clone();
        for r in 0..out.rows {
            let k = sv.data[r];
            for o in out.row_mut(r) {
                *o *= k;
            }
        }
        Ok(self.push(out, Op::ScaleRows(a, s)))
    }

    pub fn mul_scalar(&mut self, a: Var, k: S) -> Var {
        let value = self.value(a).map(|x| x * k);
        self.push(value, Op::MulScalar(a, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: S) -> Var {
        let value = self.value(a).map(|x| x + k);
        self.push(value, Op::AddScalar(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| if x > S::zero() { x } else { S::zero() });
        self.push(value, Op::Relu(a))
    }

    /// ELU with unit alpha.
    pub fn elu(&mut self, a: Var) -> Var {
        let value = self
            .value(a)
            .map(|x| if x > S::zero() { x } else { x.exp_m1() });
        self.push(value, Op::Elu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid_stable);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let value = self.value(a).map(softplus_stable);
        self.push(value, Op::Softplus(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.abs());
        self.push(value, Op::Abs(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x * x);
        self.push(value, Op::Square(a))
    }

    /// Elementwise square root; the gradient at zero is defined as zero.
    pub fn sqrt(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.sqrt());
        self.push(value, Op::Sqrt(a))
    }

    /// Concatenates two (N, *) arrays along columns.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if ar != br {
            return Err(AutodiffError::Shape {
                op: "concat_cols",
                detail: format!("({ar}, {ac}) | ({br}, {bc})"),
            });
        }
        let av = self.value(a);
        let bv = self.value(b);
        let mut out = Array::zeros(ar, ac + bc);
        for r in 0..ar {
            out.row_mut(r)[..ac].copy_from_slice(av.row(r));
            out.row_mut(r)[ac..].copy_from_slice(bv.row(r));
        }
        Ok(self.push(out, Op::ConcatCols(a, b)))
    }

    /// out[i, :] = a[idx[i], :]. Indices may repeat.
    pub fn gather_rows(&mut self, a: Var, idx: Arc<Vec<usize>>) -> Result<Var> {
        let (ar, ac) = self.shape(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= ar) {
            return Err(AutodiffError::Invalid {
                op: "gather_rows",
                msg: format!("index {bad} out of range for {ar} rows"),
            });
        }
        let av = self.value(a);
        let mut out = Array::zeros(idx.len(), ac);
        for (i, &src) in idx.iter().enumerate() {
            out.row_mut(i).copy_from_slice(av.row(src));
        }
        Ok(self.push(out, Op::GatherRows(a, idx)))
    }

    /// out has n_rows rows; row a[i, :] is added into out[idx[i], :].
    pub fn scatter_add_rows(&mut self, a: Var, idx: Arc<Vec<usize>>, n_rows: usize) -> Result<Var> {
        let (ar, ac) = self.shape(a);
        if idx.len() != ar {
            return Err(AutodiffError::Shape {
                op: "scatter_add_rows",
                detail: format!("{} indices for {} rows", idx.len(), ar),
            });
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= n_rows) {
            return Err(AutodiffError::Invalid {
                op: "scatter_add_rows",
                msg: format!("index {bad} out of range for {n_rows} rows"),
            });
        }
        let av = self.value(a);
        let mut out = Array::zeros(n_rows, ac);
        for (i, &dst) in idx.iter().enumerate() {
            let src = av.row(i);
            let orow = out.row_mut(dst);
            for (o, &x) in orow.iter_mut().zip(src) {
                *o += x;
            }
        }
        Ok(self.push(out, Op::ScatterAddRows(a, idx)))
    }

    /// Copy of `base` with row rows[k] overwritten by repl[k, :]. Rows kept
    /// from `base` are bitwise untouched. Indices must be unique.
    pub fn row_replace(&mut self, base: Var, rows: Arc<Vec<usize>>, repl: Var) -> Result<Var> {
        let (br, bc) = self.shape(base);
        let (rr, rc) = self.shape(repl);
        if rr != rows.len() || rc != bc {
            return Err(AutodiffError::Shape {
                op: "row_replace",
                detail: format!("{} rows of width {rc} into ({br}, {bc})", rows.len()),
            });
        }
        let mut seen = vec![false; br];
        for &r in rows.iter() {
            if r >= br {
                return Err(AutodiffError::Invalid {
                    op: "row_replace",
                    msg: format!("row {r} out of range for {br} rows"),
                });
            }
            if seen[r] {
                return Err(AutodiffError::Invalid {
                    op: "row_replace",
                    msg: format!("row {r} named twice"),
                });
            }
            seen[r] = true;
        }
        let mut out = self.value(base).clone();
        let rv = self.value(repl);
        for (k, &r) in rows.iter().enumerate() {
            out.row_mut(r).copy_from_slice(rv.row(k));
        }
        Ok(self.push(out, Op::RowReplace { base, rows, repl }))
    }

    /// Column-wise max over rows of gate[r] * a[r, c], returning (1, C).
    /// Ties keep the lowest row index. With a gate of ones this is a plain
    /// max pool, bit for bit, since multiplying by one is exact.
    pub fn masked_max_pool(&mut self, a: Var, gate: Var) -> Result<Var> {
        let (ar, ac) = self.shape(a);
        let (gr, gc) = self.shape(gate);
        if gr != ar || gc != 1 {
            return Err(AutodiffError::Shape {
                op: "masked_max_pool",
                detail: format!("{:?} gated by {:?}", self.shape(a), self.shape(gate)),
            });
        }
        if ar == 0 {
            return Err(AutodiffError::Invalid {
                op: "masked_max_pool",
                msg: "empty input".into(),
            });
        }
        let av = self.value(a);
        let gv = self.value(gate);
        let mut out = Array::zeros(1, ac);
        let mut argmax = vec![0usize; ac];
        for c in 0..ac {
            let mut best = av.at(0, c) * gv.data[0];
            for r in 1..ar {
                let x = av.at(r, c) * gv.data[r];
                if x > best {
                    best = x;
                    argmax[c] = r;
                }
            }
            out.data[c] = best;
        }
        Ok(self.push(out, Op::MaskedMaxPool { a, gate, argmax }))
    }

    /// Group normalization over a (N, C) array: channels split into
    /// `groups` contiguous groups, statistics taken over all rows and the
    /// group's channels together, then a per-channel affine. Statistics use
    /// exact summation, so the output is invariant to row order.
    pub fn group_norm(
        &mut self,
        a: Var,
        gamma: Var,
        beta: Var,
        groups: usize,
        eps: S,
    ) -> Result<Var> {
        let (n, c) = self.shape(a);
        if groups == 0 || c % groups != 0 {
            return Err(AutodiffError::Invalid {
                op: "group_norm",
                msg: format!("{c} channels, {groups} groups"),
            });
        }
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            let (vr, vc) = self.shape(v);
            if vr != 1 || vc != c {
                return Err(AutodiffError::Shape {
                    op: "group_norm",
                    detail: format!("{name} is ({vr}, {vc}), want (1, {c})"),
                });
            }
        }
        if n == 0 {
            return Err(AutodiffError::Invalid {
                op: "group_norm",
                msg: "empty input".into(),
            });
        }
        let cs = c / groups;
        let av = self.value(a);
        let gv = self.value(gamma);
        let bv = self.value(beta);
        let count = S::from_f64((n * cs) as f64);
        let mut mean = vec![S::zero(); groups];
        let mut rstd = vec![S::zero(); groups];
        let mut out = Array::zeros(n, c);
        for g in 0..groups {
            let lo = g * cs;
            let hi = lo + cs;
            let m = exact_sum(GroupIter::new(av, lo, hi).map(|(_, _, x)| x)) / count;
            let var = exact_sum(GroupIter::new(av, lo, hi).map(|(_, _, x)| {
                let d = x - m;
                d * d
            })) / count;
            let r = (var + eps).sqrt().recip();
            mean[g] = m;
            rstd[g] = r;
            for row in 0..n {
                for col in lo..hi {
                    let xhat = (av.at(row, col) - m) * r;
                    out.data[row * c + col] = xhat * gv.data[col] + bv.data[col];
                }
            }
        }
        Ok(self.push(
            out,
            Op::GroupNorm {
                a,
                gamma,
                beta,
                groups,
                mean,
                rstd,
            },
        ))
    }

    /// Rescales each row to unit length: x / sqrt(|x|^2 + eps).
    pub fn normalize_rows(&mut self, a: Var, eps: S) -> Var {
        let av = self.value(a);
        let mut out = Array::zeros(av.rows, av.cols);
        let mut rnorm = vec![S::zero(); av.rows];
        for r in 0..av.rows {
            let row = av.row(r);
            let mut sq = S::zero();
            for &x in row {
                sq += x * x;
            }
            let inv = (sq + eps).sqrt().recip();
            rnorm[r] = inv;
            for (o, &x) in out.row_mut(r).iter_mut().zip(row) {
                *o = x * inv;
            }
        }
        self.push(out, Op::NormalizeRows { a, rnorm })
    }

    /// Row-wise cross product of two (N, 3) arrays.
    pub fn cross_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape("cross_rows", a, b)?;
        let (_, c) = self.shape(a);
        if c != 3 {
            return Err(AutodiffError::Shape {
                op: "cross_rows",
                detail: format!("width {c}, want 3"),
            });
        }
        let av = self.value(a);
        let bv = self.value(b);
        let mut out = Array::zeros(av.rows, 3);
        for r in 0..av.rows {
            let x = av.row(r);
            let y = bv.row(r);
            let o = out.row_mut(r);
            o[0] = x[1] * y[2] - x[2] * y[1];
            o[1] = x[2] * y[0] - x[0] * y[2];
            o[2] = x[0] * y[1] - x[1] * y[0];
        }
        Ok(self.push(out, Op::CrossRows(a, b)))
    }

    /// Column sums: (N, C) -> (1, C), exact per column.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut out = Array::zeros(1, av.cols);
        for c in 0..av.cols {
            out.data[c] = exact_sum((0..av.rows).map(|r| av.at(r, c)));
        }
        self.push(out, Op::SumRows(a))
    }

    /// Row sums: (N, C) -> (N, 1), exact per row.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut out = Array::zeros(av.rows, 1);
        for r in 0..av.rows {
            out.data[r] = exact_sum_slice(av.row(r));
        }
        self.push(out, Op::SumCols(a))
    }

    /// Sum of every element, exact, as (1, 1).
    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Array::scalar(exact_sum_slice(&self.value(a).data));
        self.push(value, Op::SumAll(a))
    }

    /// Mean of every element, exact sum then one division, as (1, 1).
    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.is_empty() {
            return Err(AutodiffError::Invalid {
                op: "mean_all",
                msg: "empty input".into(),
            });
        }
        let n = S::from_f64(av.len() as f64);
        let value = Array::scalar(exact_sum_slice(&av.data) / n);
        Ok(self.push(value, Op::MeanAll(a)))
    }

    /// Minimum element as (1, 1); ties keep the lowest flat index.
    pub fn min_all(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.is_empty() {
            return Err(AutodiffError::Invalid {
                op: "min_all",
                msg: "empty input".into(),
            });
        }
        let mut arg = 0usize;
        let mut best = av.data[0];
        for (i, &x) in av.data.iter().enumerate().skip(1) {
            if x < best {
                best = x;
                arg = i;
            }
        }
        Ok(self.push(Array::scalar(best), Op::MinAll(a, arg)))
    }

    /// Same data, new shape; element count must match.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let av = self.value(a);
        if av.len() != rows * cols {
            return Err(AutodiffError::Shape {
                op: "reshape",
                detail: format!("{:?} as ({rows}, {cols})", av.shape()),
            });
        }
        let value = Array {
            rows,
            cols,
            data: av.data.clone(),
        };
        Ok(self.push(value, Op::Reshape(a)))
    }

    /// Reverse sweep from a (1, 1) root seeded with 1. Returns one gradient
    /// per reachable node; unreachable nodes cost nothing.
    pub fn backward(&self, root: Var) -> Result<Gradients<S>> {
        let (rr, rc) = self.shape(root);
        if (rr, rc) != (1, 1) {
            return Err(AutodiffError::NonScalarRoot { rows: rr, cols: rc });
        }
        let mut grads: Vec<Option<Array<S>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[root.0] = Some(Array::scalar(S::one()));

        for i in (0..=root.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            self.backprop_node(i, &dy, &mut grads);
            grads[i] = Some(dy);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, i: usize, dy: &Array<S>, grads: &mut [Option<Array<S>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let da = matmul_nt(dy, bv);
                let db = matmul_tn(av, dy);
                acc(grads, *a, da, av.shape());
                acc(grads, *b, db, bv.shape());
            }
            Op::SparseMatMul(m, a) => {
                let da = m
                    .transposed()
                    .matmul_dense(dy)
                    .expect("transpose shape checked at forward");
                acc(grads, *a, da, self.value(*a).shape());
            }
            Op::Add(a, b) => {
                acc(grads, *a, dy.clone(), dy.shape());
                acc(grads, *b, dy.clone(), dy.shape());
            }
            Op::AddBias(a, bias) => {
                acc(grads, *a, dy.clone(), dy.shape());
                let mut db = Array::zeros(1, dy.cols);
                for c in 0..dy.cols {
                    db.data[c] = exact_sum((0..dy.rows).map(|r| dy.at(r, c)));
                }
                acc(grads, *bias, db, (1, dy.cols));
            }
            Op::Sub(a, b) => {
                acc(grads, *a, dy.clone(), dy.shape());
                acc(grads, *b, dy.map(|x| -x), dy.shape());
            }
            Op::Neg(a) => {
                acc(grads, *a, dy.map(|x| -x), dy.shape());
            }
            Op::Mul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                acc(grads, *a, zip_values(dy, bv, |d, y| d * y), av.shape());
                acc(grads, *b, zip_values(dy, av, |d, x| d * x), bv.shape());
            }
            Op::ScaleRows(a, s) => {
                let av = self.value(*a);
                let sv = self.value(*s);
                let mut da = dy.clone();
                let mut ds = Array::zeros(av.rows, 1);
                for r in 0..av.rows {
                    let k = sv.data[r];
                    let mut dot = S::zero();
                    for (d, &x) in da.row_mut(r).iter_mut().zip(av.row(r)) {
                        dot += *d * x;
                        *d *= k;
                    }
                    ds.data[r] = dot;
                }
                acc(grads, *a, da, av.shape());
                acc(grads, *s, ds, sv.shape());
            }
            Op::MulScalar(a, k) => {
                let k = *k;
                acc(grads, *a, dy.map(|d| d * k), dy.shape());
            }
            Op::AddScalar(a) => {
                acc(grads, *a, dy.clone(), dy.shape());
            }
            Op::Relu(a) => {
                let av = self.value(*a);
                let da = zip_values(dy, av, |d, x| if x > S::zero() { d } else { S::zero() });
                acc(grads, *a, da, av.shape());
            }
            Op::Elu(a) => {
                let av = self.value(*a);
                let yv = &node.value;
                let mut da = Array::zeros(av.rows, av.cols);
                for ((o, &d), (&x, &y)) in da
                    .data
                    .iter_mut()
                    .zip(&dy.data)
                    .zip(av.data.iter().zip(&yv.data))
                {
                    *o = if x > S::zero() { d } else { d * (y + S::one()) };
                }
                acc(grads, *a, da, av.shape());
            }
            Op::Sigmoid(a) => {
                let yv = &node.value;
                let da = zip_values(dy, yv, |d, y| d * y * (S::one() - y));
                acc(grads, *a, da, yv.shape());
            }
            Op::Softplus(a) => {
                let av = self.value(*a);
                let da = zip_values(dy, av, |d, x| d * sigmoid_stable(x));
                acc(grads, *a, da, av.shape());
            }
            Op::Abs(a) => {
                let av = self.value(*a);
                let da = zip_values(dy, av, |d, x| {
                    if x > S::zero() {
                        d
                    } else if x < S::zero() {
                        -d
                    } else {
                        S::zero()
                    }
                });
                acc(grads, *a, da, av.shape());
            }
            Op::Square(a) => {
                let av = self.value(*a);
                let two = S::from_f64(2.0);
                let da = zip_values(dy, av, |d, x| d * two * x);
                acc(grads, *a, da, av.shape());
            }
            Op::Sqrt(a) => {
                let av = self.value(*a);
                let yv = &node.value;
                let half = S::from_f64(0.5);
                let mut da = Array::zeros(av.rows, av.cols);
                for ((o, &d), (&x, &y)) in da
                    .data
                    .iter_mut()
                    .zip(&dy.data)
                    .zip(av.data.iter().zip(&yv.data))
                {
                    *o = if x == S::zero() { S::zero() } else { d * half / y };
                }
                acc(grads, *a, da, av.shape());
            }
            Op::ConcatCols(a, b) => {
                let (ar, ac) = self.shape(*a);
                let (_, bc) = self.shape(*b);
                let mut da = Array::zeros(ar, ac);
                let mut db = Array::zeros(ar, bc);
                for r in 0..ar {
                    da.row_mut(r).copy_from_slice(&dy.row(r)[..ac]);
                    db.row_mut(r).copy_from_slice(&dy.row(r)[ac..]);
                }
                acc(grads, *a, da, (ar, ac));
                acc(grads, *b, db, (ar, bc));
            }
            Op::GatherRows(a, idx) => {
                let (ar, ac) = self.shape(*a);
                let mut da = Array::zeros(ar, ac);
                for (i, &src) in idx.iter().enumerate() {
                    let drow = dy.row(i);
                    let orow = da.row_mut(src);
                    for (o, &d) in orow.iter_mut().zip(drow) {
                        *o += d;
                    }
                }
                acc(grads, *a, da, (ar, ac));
            }
            Op::ScatterAddRows(a, idx) => {
                let (ar, ac) = self.shape(*a);
                let mut da = Array::zeros(ar, ac);
                for (i, &dst) in idx.iter().enumerate() {
                    da.row_mut(i).copy_from_slice(dy.row(dst));
                }
                acc(grads, *a, da, (ar, ac));
            }
            Op::RowReplace { base, rows, repl } => {
                let (br, bc) = self.shape(*base);
                let mut dbase = dy.clone();
                let mut drepl = Array::zeros(rows.len(), bc);
                for (k, &r) in rows.iter().enumerate() {
                    drepl.row_mut(k).copy_from_slice(dy.row(r));
                    dbase.row_mut(r).fill(S::zero());
                }
                acc(grads, *base, dbase, (br, bc));
                acc(grads, *repl, drepl, (rows.len(), bc));
            }
            Op::MaskedMaxPool { a, gate, argmax } => {
                let av = self.value(*a);
                let gv = self.value(*gate);
                let mut da = Array::zeros(av.rows, av.cols);
                let mut dg = Array::zeros(av.rows, 1);
                for (c, &r) in argmax.iter().enumerate() {
                    let d = dy.data[c];
                    *da.at_mut(r, c) += d * gv.data[r];
                    dg.data[r] += d * av.at(r, c);
                }
                acc(grads, *a, da, av.shape());
                acc(grads, *gate, dg, (av.rows, 1));
            }
            Op::GroupNorm {
                a,
                gamma,
                beta,
                groups,
                mean,
                rstd,
            } => {
                let av = self.value(*a);
                let gv = self.value(*gamma);
                let (n, c) = av.shape();
                let cs = c / groups;
                let count = S::from_f64((n * cs) as f64);

                let mut dgamma = Array::zeros(1, c);
                let mut dbeta = Array::zeros(1, c);
                for col in 0..c {
                    let g = col / cs;
                    let (m, r) = (mean[g], rstd[g]);
                    dbeta.data[col] = exact_sum((0..n).map(|row| dy.at(row, col)));
                    dgamma.data[col] = exact_sum((0..n).map(|row| {
                        let xhat = (av.at(row, col) - m) * r;
                        dy.at(row, col) * xhat
                    }));
                }

                let mut da = Array::zeros(n, c);
                for g in 0..*groups {
                    let lo = g * cs;
                    let hi = lo + cs;
                    let (m, r) = (mean[g], rstd[g]);
                    let s1 = exact_sum(
                        GroupIter::new(av, lo, hi).map(|(row, col, _)| dy.at(row, col) * gv.data[col]),
                    );
                    let s2 = exact_sum(GroupIter::new(av, lo, hi).map(|(row, col, x)| {
                        let xhat = (x - m) * r;
                        dy.at(row, col) * gv.data[col] * xhat
                    }));
                    let mean_dxhat = s1 / count;
                    let mean_dxhat_xhat = s2 / count;
                    for row in 0..n {
                        for col in lo..hi {
                            let xhat = (av.at(row, col) - m) * r;
                            let dxhat = dy.at(row, col) * gv.data[col];
                            da.data[row * c + col] =
                                r * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
                        }
                    }
                }
                acc(grads, *a, da, (n, c));
                acc(grads, *gamma, dgamma, (1, c));
                acc(grads, *beta, dbeta, (1, c));
            }
            Op::NormalizeRows { a, rnorm } => {
                let av = self.value(*a);
                let mut da = Array::zeros(av.rows, av.cols);
                for r in 0..av.rows {
                    let x = av.row(r);
                    let d = dy.row(r);
                    let inv = rnorm[r];
                    let mut dot = S::zero();
                    for (&xi, &di) in x.iter().zip(d) {
                        dot += xi * di;
                    }
                    let inv3 = inv * inv * inv;
                    for ((o, &xi), &di) in da.row_mut(r).iter_mut().zip(x).zip(d) {
                        *o = di * inv - xi * dot * inv3;
                    }
                }
                acc(grads, *a, da, av.shape());
            }
            Op::CrossRows(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let mut da = Array::zeros(av.rows, 3);
                let mut db = Array::zeros(av.rows, 3);
                for r in 0..av.rows {
                    let x = av.row(r);
                    let y = bv.row(r);
                    let d = dy.row(r);
                    // c = x × y, so dx = y × d and dy = d × x.
                    let ga = da.row_mut(r);
                    ga[0] = y[1] * d[2] - y[2] * d[1];
                    ga[1] = y[2] * d[0] - y[0] * d[2];
                    ga[2] = y[0] * d[1] - y[1] * d[0];
                    let gb = db.row_mut(r);
                    gb[0] = d[1] * x[2] - d[2] * x[1];
                    gb[1] = d[2] * x[0] - d[0] * x[2];
                    gb[2] = d[0] * x[1] - d[1] * x[0];
                }
                acc(grads, *a, da, av.shape());
                acc(grads, *b, db, bv.shape());
            }
            Op::SumRows(a) => {
                let (ar, ac) = self.shape(*a);
                let mut da = Array::zeros(ar, ac);
                for r in 0..ar {
                    da.row_mut(r).copy_from_slice(&dy.data);
                }
                acc(grads, *a, da, (ar, ac));
            }
            Op::SumCols(a) => {
                let (ar, ac) = self.shape(*a);
                let mut da = Array::zeros(ar, ac);
                for r in 0..ar {
                    da.row_mut(r).fill(dy.data[r]);
                }
                acc(grads, *a, da, (ar, ac));
            }
            Op::SumAll(a) => {
                let (ar, ac) = self.shape(*a);
                let d = dy.item();
                let da = Array {
                    rows: ar,
                    cols: ac,
                    data: vec![d; ar * ac],
                };
                acc(grads, *a, da, (ar, ac));
            }
            Op::MeanAll(a) => {
                let (ar, ac) = self.shape(*a);
                let d = dy.item() / S::from_f64((ar * ac) as f64);
                let da = Array {
                    rows: ar,
                    cols: ac,
                    data: vec![d; ar * ac],
                };
                acc(grads, *a, da, (ar, ac));
            }
            Op::MinAll(a, arg) => {
                let (ar, ac) = self.shape(*a);
                let mut da = Array::zeros(ar, ac);
                da.data[*arg] = dy.item();
                acc(grads, *a, da, (ar, ac));
            }
            Op::Reshape(a) => {
                let (ar, ac) = self.shape(*a);
                let da = Array {
                    rows: ar,
                    cols: ac,
                    data: dy.data.clone(),
                };
                acc(grads, *a, da, (ar, ac));
            }
        }
    }
}

/// Adds a contribution into the gradient slot, allocating on first touch.
fn acc<S: Scalar>(
    grads: &mut [Option<Array<S>>],
    v: Var,
    contribution: Array<S>,
    shape: (usize, usize),
) {
    debug_assert_eq!(contribution.shape(), shape);
    match &mut grads[v.0] {
        Some(g) => {
            for (a, b) in g.data.iter_mut().zip(&contribution.data) {
                *a += *b;
            }
        }
        slot @ None => *slot = Some(contribution),
    }
}

fn zip_values<S: Scalar>(a: &Array<S>, b: &Array<S>, f: impl Fn(S, S) -> S) -> Array<S> {
    Array {
        rows: a.rows,
        cols: a.cols,
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
    }
}

fn sigmoid_stable<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        (S::one() + (-x).exp()).recip()
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

fn softplus_stable<S: Scalar>(x: S) -> S {
    let zero = S::zero();
    let m = if x > zero { x } else { zero };
    m + (-x.abs()).exp().ln_1p()
}

/// C = A B. Each output row is produced by exactly one task with a fixed
/// inner loop order, so the result does not depend on the thread count.
pub(crate) fn matmul_values<S: Scalar>(a: &Array<S>, b: &Array<S>) -> Array<S> {
    let (m, k) = a.shape();
    let (_, n) = b.shape();
    let mut out = Array::zeros(m, n);
    let work = m * k * n;
    let body = |(i, orow): (usize, &mut [S])| {
        let arow = a.row(i);
        for (kk, &av) in arow.iter().enumerate() {
            if av == S::zero() {
                continue;
            }
            let brow = &b.data[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    };
    if work >= PAR_FLOP_THRESHOLD && m > 1 {
        out.data.par_chunks_mut(n).enumerate().for_each(body);
    } else {
        out.data.chunks_mut(n).enumerate().for_each(body);
    }
    out
}

/// C = A B^T, used for dA = dC B^T.
fn matmul_nt<S: Scalar>(a: &Array<S>, b: &Array<S>) -> Array<S> {
    let (m, k) = a.shape();
    let (n, _) = b.shape();
    let mut out = Array::zeros(m, n);
    let work = m * k * n;
    let body = |(i, orow): (usize, &mut [S])| {
        let arow = a.row(i);
        for (o, j) in orow.iter_mut().zip(0..n) {
            let brow = b.row(j);
            let mut dot = S::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                dot += x * y;
            }
            *o = dot;
        }
    };
    if work >= PAR_FLOP_THRESHOLD && m > 1 {
        out.data.par_chunks_mut(n).enumerate().for_each(body);
    } else {
        out.data.chunks_mut(n).enumerate().for_each(body);
    }
    out
}

/// C = A^T B, used for dB = A^T dC. Parallel over rows of C, which are
/// columns of A, so each output row is again owned by one task.
fn matmul_tn<S: Scalar>(a: &Array<S>, b: &Array<S>) -> Array<S> {
    let (m, k) = a.shape();
    let (_, n) = b.shape();
    let mut out = Array::zeros(k, n);
    let work = m * k * n;
    let body = |(kk, orow): (usize, &mut [S])| {
        for i in 0..m {
            let av = a.at(i, kk);
            if av == S::zero() {
                continue;
            }
            let brow = b.row(i);
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    };
    if work >= PAR_FLOP_THRESHOLD && k > 1 {
        out.data.par_chunks_mut(n).enumerate().for_each(body);
    } else {
        out.data.chunks_mut(n).enumerate().for_each(body);
    }
    out
}

/// Iterates a channel-group of a (N, C) array as (row, col, value).
struct GroupIter<'a, S: Scalar> {
    a: &'a Array<S>,
    lo: usize,
    hi: usize,
    row: usize,
    col: usize,
}

impl<'a, S: Scalar> GroupIter<'a, S> {
    fn new(a: &'a Array<S>, lo: usize, hi: usize) -> Self {
        GroupIter { a, lo, hi, row: 0, col: lo }
    }
}

impl<'a, S: Scalar> Iterator for GroupIter<'a, S> {
    type Item = (usize, usize, S);

    fn next(&mut self) -> Option<Self::Item> {
        if self.row >= self.a.rows {
            return None;
        }
        let item = (self.row, self.col, self.a.at(self.row, self.col));
        self.col += 1;
        if self.col == self.hi {
            self.col = self.lo;
            self.row += 1;
        }
        Some(item)
    }
}

impl<'a, S: Scalar> Clone for GroupIter<'a, S> {
    fn clone(&self) -> Self {
        GroupIter {
            a: self.a,
            lo: self.lo,
            hi: self.hi,
            row: self.row,
            col: self.col,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tape() -> Tape<f64> {
        Tape::new()
    }

    #[test]
    fn matmul_small_matches_by_hand() {
        let mut t = tape();
        let a = t.leaf(Array::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let b = t.leaf(Array::from_vec(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap());
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.value(c).data, vec![58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn matmul_parallel_matches_serial() {
        let mut big = Array::<f64>::zeros(80, 70);
        for (i, x) in big.data.iter_mut().enumerate() {
            *x = ((i * 2654435761) % 1000) as f64 / 997.0 - 0.5;
        }
        let mut b = Array::<f64>::zeros(70, 90);
        for (i, x) in b.data.iter_mut().enumerate() {
            *x = ((i * 40503) % 1000) as f64 / 991.0 - 0.5;
        }
        let fast = matmul_values(&big, &b);
        // Reference: plain triple loop.
        let mut slow = Array::<f64>::zeros(80, 90);
        for i in 0..80 {
            for kk in 0..70 {
                let av = big.at(i, kk);
                if av == 0.0 {
                    continue;
                }
                for j in 0..90 {
                    slow.data[i * 90 + j] += av * b.at(kk, j);
                }
            }
        }
        assert_eq!(fast.data, slow.data);
    }

    #[test]
    fn backward_of_simple_chain() {
        // f = mean((2x + 1)^2), df/dx = 4(2x + 1)/n
        let mut t = tape();
        let x = t.leaf(Array::from_vec(1, 3, vec![0.0, 1.0, -2.0]).unwrap());
        let two_x = t.mul_scalar(x, 2.0);
        let shifted = t.add_scalar(two_x, 1.0);
        let sq = t.square(shifted);
        let loss = t.mean_all(sq).unwrap();
        let g = t.backward(loss).unwrap();
        let gx = g.get(x).unwrap();
        for (i, &xi) in [0.0f64, 1.0, -2.0].iter().enumerate() {
            let want = 4.0 * (2.0 * xi + 1.0) / 3.0;
            assert!((gx.data[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn relu_and_abs_have_zero_grad_at_zero() {
        let mut t = tape();
        let x = t.leaf(Array::from_vec(1, 3, vec![-1.0, 0.0, 2.0]).unwrap());
        let r = t.relu(x);
        let s = t.sum_all(r);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data, vec![0.0, 0.0, 1.0]);

        let mut t = tape();
        let x = t.leaf(Array::from_vec(1, 3, vec![-1.0, 0.0, 2.0]).unwrap());
        let a = t.abs(x);
        let s = t.sum_all(a);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data, vec![-1.0, 0.0, 1.0]);
    }

    #[test]
    fn sqrt_grad_is_zero_at_zero() {
        let mut t = tape();
        let x = t.leaf(Array::from_vec(1, 2, vec![0.0, 4.0]).unwrap());
        let r = t.sqrt(x);
        let s = t.sum_all(r);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data, vec![0.0, 0.25]);
    }

    #[test]
    fn masked_max_pool_ties_take_lowest_row() {
        let mut t = tape();
        let a = t.leaf(Array::from_vec(3, 2, vec![5.0, 1.0, 5.0, 3.0, 2.0, 3.0]).unwrap());
        let ones = t.constant(Array::from_vec(3, 1, vec![1.0; 3]).unwrap());
        let p = t.masked_max_pool(a, ones).unwrap();
        assert_eq!(t.value(p).data, vec![5.0, 3.0]);
        let s = t.sum_all(p);
        let g = t.backward(s).unwrap();
        // Row 0 wins column 0; row 1 wins column 1 (tie with row 2).
        assert_eq!(
            g.get(a).unwrap().data,
            vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]
        );
    }

    #[test]
    fn masked_max_pool_with_unit_gate_is_plain_max() {
        let mut t = tape();
        let vals = vec![0.25, -1.5, 3.5, 0.125, -0.75, 2.0];
        let a = t.leaf(Array::from_vec(3, 2, vals.clone()).unwrap());
        let ones = t.constant(Array::from_vec(3, 1, vec![1.0; 3]).unwrap());
        let p = t.masked_max_pool(a, ones).unwrap();
        let want0 = vals.iter().step_by(2).cloned().fold(f64::MIN, f64::max);
        let want1 = vals.iter().skip(1).step_by(2).cloned().fold(f64::MIN, f64::max);
        assert_eq!(t.value(p).data, vec![want0, want1]);
    }

    #[test]
    fn group_norm_single_group_normalizes() {
        let mut t = tape();
        let a = t.leaf(Array::from_vec(4, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap());
        let gamma = t.leaf(Array::from_vec(1, 2, vec![1.0, 1.0]).unwrap());
        let beta = t.leaf(Array::from_vec(1, 2, vec![0.0, 0.0]).unwrap());
        let y = t.group_norm(a, gamma, beta, 1, 1e-12).unwrap();
        let out = t.value(y);
        let mean: f64 = out.data.iter().sum::<f64>() / 8.0;
        let var: f64 = out.data.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 8.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-9);
    }

    #[test]
    fn group_norm_is_shift_invariant_per_group() {
        let vals = vec![0.3, -1.2, 0.7, 2.0, -0.4, 0.9, 1.1, -0.8];
        let mut t = tape();
        let a = t.leaf(Array::from_vec(2, 4, vals.clone()).unwrap());
        let gamma = t.leaf(Array::from_vec(1, 4, vec![1.0; 4]).unwrap());
        let beta = t.leaf(Array::from_vec(1, 4, vec![0.0; 4]).unwrap());
        let y = t.group_norm(a, gamma, beta, 2, 1e-5).unwrap();
        let base = t.value(y).data.clone();

        // Shift group 0 channels (cols 0..2) by 100.
        let shifted: Vec<f64> = vals
            .iter()
            .enumerate()
            .map(|(i, &v)| if i % 4 < 2 { v + 100.0 } else { v })
            .collect();
        let mut t2 = tape();
        let a2 = t2.leaf(Array::from_vec(2, 4, shifted).unwrap());
        let gamma2 = t2.leaf(Array::from_vec(1, 4, vec![1.0; 4]).unwrap());
        let beta2 = t2.leaf(Array::from_vec(1, 4, vec![0.0; 4]).unwrap());
        let y2 = t2.group_norm(a2, gamma2, beta2, 2, 1e-5).unwrap();
        for (u, v) in base.iter().zip(&t2.value(y2).data) {
            assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn group_norm_is_row_permutation_invariant_bitwise() {
        let vals: Vec<f64> = (0..24).map(|i| ((i * 37) % 17) as f64 * 0.37 - 2.0).collect();
        let mut t = tape();
        let a = t.leaf(Array::from_vec(6, 4, vals.clone()).unwrap());
        let gamma = t.leaf(Array::from_vec(1, 4, vec![0.5, 1.5, -1.0, 2.0]).unwrap());
        let beta = t.leaf(Array::from_vec(1, 4, vec![0.1, -0.2, 0.3, 0.0]).unwrap());
        let y = t.group_norm(a, gamma, beta, 2, 1e-5).unwrap();
        let base = t.value(y).clone();

        let perm = [3usize, 0, 5, 1, 4, 2];
        let mut pvals = vec![0.0; 24];
        for (dst, &src) in perm.iter().enumerate() {
            pvals[dst * 4..dst * 4 + 4].copy_from_slice(&vals[src * 4..src * 4 + 4]);
        }
        let mut t2 = tape();
        let a2 = t2.leaf(Array::from_vec(6, 4, pvals).unwrap());
        let gamma2 = t2.leaf(Array::from_vec(1, 4, vec![0.5, 1.5, -1.0, 2.0]).unwrap());
        let beta2 = t2.leaf(Array::from_vec(1, 4, vec![0.1, -0.2, 0.3, 0.0]).unwrap());
        let y2 = t2.group_norm(a2, gamma2, beta2, 2, 1e-5).unwrap();
        let out2 = t2.value(y2);
        for (dst, &src) in perm.iter().enumerate() {
            assert_eq!(out2.row(dst), base.row(src));
        }
    }

    #[test]
    fn row_replace_keeps_other_rows_bitwise() {
        let mut t = tape();
        let base = t.leaf(Array::from_vec(3, 2, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap());
        let repl = t.leaf(Array::from_vec(1, 2, vec![9.0, 8.0]).unwrap());
        let out = t.row_replace(base, Arc::new(vec![1]), repl).unwrap();
        let v = t.value(out);
        assert_eq!(v.row(0), &[0.1, 0.2]);
        assert_eq!(v.row(1), &[9.0, 8.0]);
        assert_eq!(v.row(2), &[0.5, 0.6]);

        let s = t.sum_all(out);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(base).unwrap().data, vec![1.0, 1.0, 0.0, 0.0, 1.0, 1.0]);
        assert_eq!(g.get(repl).unwrap().data, vec![1.0, 1.0]);
    }

    #[test]
    fn row_replace_rejects_duplicates_and_range() {
        let mut t = tape();
        let base = t.leaf(Array::zeros(3, 2));
        let repl = t.leaf(Array::zeros(2, 2));
        assert!(t.row_replace(base, Arc::new(vec![1, 1]), repl).is_err());
        let repl2 = t.leaf(Array::zeros(1, 2));
        assert!(t.row_replace(base, Arc::new(vec![5]), repl2).is_err());
    }

    #[test]
    fn gather_scatter_round_trip_grads() {
        let mut t = tape();
        let a = t.leaf(Array::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let idx = Arc::new(vec![2usize, 0, 2]);
        let gathered = t.gather_rows(a, idx.clone()).unwrap();
        assert_eq!(t.value(gathered).data, vec![5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        let s = t.sum_all(gathered);
        let g = t.backward(s).unwrap();
        // Row 2 gathered twice, row 1 never.
        assert_eq!(g.get(a).unwrap().data, vec![1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);

        let mut t = tape();
        let a = t.leaf(Array::from_vec(3, 1, vec![1.0, 2.0, 3.0]).unwrap());
        let out = t.scatter_add_rows(a, Arc::new(vec![1, 1, 0]), 2).unwrap();
        assert_eq!(t.value(out).data, vec![3.0, 3.0]);
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut t = tape();
        let a = t.leaf(Array::zeros(2, 2));
        assert!(matches!(
            t.backward(a),
            Err(AutodiffError::NonScalarRoot { .. })
        ));
    }

    #[test]
    fn unreachable_nodes_have_no_gradient() {
        let mut t = tape();
        let a = t.leaf(Array::scalar(1.0));
        let b = t.leaf(Array::scalar(2.0));
        let c = t.square(a);
        let _unused = t.square(b);
        let s = t.sum_all(c);
        let g = t.backward(s).unwrap();
        assert!(g.get(a).is_some());
        assert!(g.get(b).is_none());
    }

    #[test]
    fn replay_is_bitwise_deterministic() {
        let build = || {
            let mut t = tape();
            let x = t.leaf(
                Array::from_vec(4, 3, (0..12).map(|i| (i as f64).sin()).collect()).unwrap(),
            );
            let w = t.leaf(
                Array::from_vec(3, 3, (0..9).map(|i| (i as f64).cos()).collect()).unwrap(),
            );
            let h = t.matmul(x, w).unwrap();
            let r = t.relu(h);
            let n = t.normalize_rows(r, 1e-8);
            let loss = t.mean_all(n).unwrap();
            let g = t.backward(loss).unwrap();
            (
                t.value(loss).item(),
                g.get(x).unwrap().data.clone(),
                g.get(w).unwrap().data.clone(),
            )
        };
        let (l1, gx1, gw1) = build();
        let (l2, gx2, gw2) = build();
        assert_eq!(l1.to_bits(), l2.to_bits());
        assert_eq!(gx1, gx2);
        assert_eq!(gw1, gw2);
    }

    #[test]
    fn min_all_takes_lowest_index_on_ties() {
        let mut t = tape();
        let a = t.leaf(Array::from_vec(1, 4, vec![3.0, 1.0, 1.0, 2.0]).unwrap());
        let m = t.min_all(a).unwrap();
        assert_eq!(t.value(m).item(), 1.0);
        let g = t.backward(m).unwrap();
        assert_eq!(g.get(a).unwrap().data, vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn reshape_preserves_data_and_grads() {
        let mut t = tape();
        let a = t.leaf(Array::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let r = t.reshape(a, 3, 2).unwrap();
        assert_eq!(t.value(r).shape(), (3, 2));
        assert_eq!(t.value(r).data, t.value(a).data);
        let sq = t.square(r);
        let s = t.sum_all(sq);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(a).unwrap().shape(), (2, 3));
        assert_eq!(g.get(a).unwrap().data, vec![2.0, 4.0, 6.0, 8.0, 10.0, 12.0]);
    }
}
