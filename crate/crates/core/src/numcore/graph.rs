//! Eager computation graph with reverse-mode differentiation.
//!
//! Values are computed as nodes are recorded. [`Graph::grad`] walks the
//! recorded nodes backwards and records the adjoint computation itself as new
//! nodes, so a gradient is again a differentiable [`Var`]. Differentiating a
//! gradient (for example an input gradient of a potential, with respect to
//! the potential's parameters) is just another call to `grad`.
//!
//! Every primitive's backward rule is written in terms of the primitive set,
//! which keeps the set closed under differentiation.

use std::collections::HashMap;

use super::tensor::{matmul, Tensor};
use crate::error::{OtError, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Primitive operations. Shapes: `B` batch rows, `n`/`m` feature columns.
#[derive(Clone, Debug)]
pub enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    /// Elementwise product.
    Mul(Var, Var),
    Scale(Var, f64),
    Square(Var),
    Softplus(Var),
    Sigmoid(Var),
    LeakyRelu(Var, f64),
    ClampMin(Var, f64),
    /// `x[B,in] · w[out,in]ᵀ + b[out]`.
    Affine { x: Var, w: Var, b: Var },
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    /// `m[B,n] + v[n]` on every row.
    AddRow(Var, Var),
    /// `[B,n] -> [n]`.
    SumRows(Var),
    /// `[n] -> [B,n]`.
    ExpandRows(Var, usize),
    /// `[B,n] -> [B]`.
    SumCols(Var),
    /// `[B] -> [B,n]`.
    ExpandCols(Var, usize),
    /// Sum of all entries.
    Sum(Var),
    /// Mean of all entries.
    Mean(Var),
    /// Scalar broadcast to a shape.
    Expand(Var, Vec<usize>),
    /// Sum of elementwise products of equally shaped tensors.
    Dot(Var, Var),
    ConcatCols(Vec<Var>),
    SliceCols { x: Var, start: usize, len: usize },
    Reshape(Var, Vec<usize>),
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "subtract",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Square(..) => "square",
            Op::Softplus(..) => "softplus",
            Op::Sigmoid(..) => "sigmoid",
            Op::LeakyRelu(..) => "leaky-relu",
            Op::ClampMin(..) => "clamp-min",
            Op::Affine { .. } => "affine",
            Op::MatMul { .. } => "matmul",
            Op::AddRow(..) => "add-row",
            Op::SumRows(..) => "sum-rows",
            Op::ExpandRows(..) => "expand-rows",
            Op::SumCols(..) => "sum-cols",
            Op::ExpandCols(..) => "expand-cols",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::Expand(..) => "expand",
            Op::Dot(..) => "dot",
            Op::ConcatCols(..) => "concat",
            Op::SliceCols { .. } => "slice",
            Op::Reshape(..) => "reshape",
        }
    }

    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::Dot(a, b)
            | Op::MatMul { a, b, .. } => vec![*a, *b],
            Op::Affine { x, w, b } => vec![*x, *w, *b],
            Op::Scale(a, _)
            | Op::Square(a)
            | Op::Softplus(a)
            | Op::Sigmoid(a)
            | Op::LeakyRelu(a, _)
            | Op::ClampMin(a, _)
            | Op::SumRows(a)
            | Op::ExpandRows(a, _)
            | Op::SumCols(a)
            | Op::ExpandCols(a, _)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Expand(a, _)
            | Op::Reshape(a, _)
            | Op::SliceCols { x: a, .. } => vec![*a],
            Op::ConcatCols(parts) => parts.clone(),
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
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

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn mismatch(op: &str, detail: String) -> OtError {
    OtError::Shape(format!("{op}: {detail}"))
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// A leaf node: parameters, inputs and constants are all leaves.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.leaf(Tensor::scalar(value))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn op(&self, v: Var) -> &Op {
        &self.nodes[v.0].op
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn require_matrix(&self, op: &str, a: Var) -> Result<(usize, usize)> {
        match *self.shape(a) {
            [r, c] => Ok((r, c)),
            ref s => Err(mismatch(op, format!("expected a matrix, got {s:?}"))),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("subtract", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| c * x);
        self.push(v, Op::Scale(a, c))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        self.push(v, Op::Square(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).map(softplus);
        self.push(v, Op::Softplus(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.push(v, Op::LeakyRelu(a, slope))
    }

    pub fn clamp_min(&mut self, a: Var, lo: f64) -> Var {
        let v = self.value(a).map(|x| x.max(lo));
        self.push(v, Op::ClampMin(a, lo))
    }

    /// `x·wᵀ + b`. A vector `x` of length `in` is treated as a single row and
    /// the result is a vector of length `out`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        if self.shape(x).len() == 1 {
            let n = self.shape(x)[0];
            let row = self.reshape(x, vec![1, n])?;
            let out = self.affine(row, w, b)?;
            let m = self.shape(out)[1];
            return self.reshape(out, vec![m]);
        }
        let (_, xin) = self.require_matrix("affine", x)?;
        let (out, win) = self.require_matrix("affine", w)?;
        if xin != win || self.shape(b) != [out] {
            return Err(mismatch(
                "affine",
                format!(
                    "x {:?}, w {:?}, b {:?}",
                    self.shape(x),
                    self.shape(w),
                    self.shape(b)
                ),
            ));
        }
        let mut v = matmul(self.value(x), self.value(w), false, true)?;
        let bias = self.value(b).data().to_vec();
        for row in v.data_mut().chunks_mut(out) {
            for (r, bb) in row.iter_mut().zip(&bias) {
                *r += bb;
            }
        }
        Ok(self.push(v, Op::Affine { x, w, b }))
    }

    pub fn matmul(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let v = matmul(self.value(a), self.value(b), ta, tb)?;
        Ok(self.push(v, Op::MatMul { a, b, ta, tb }))
    }

    pub fn add_row(&mut self, m: Var, v: Var) -> Result<Var> {
        let (_, c) = self.require_matrix("add-row", m)?;
        if self.shape(v) != [c] {
            return Err(mismatch(
                "add-row",
                format!("{:?} + row {:?}", self.shape(m), self.shape(v)),
            ));
        }
        let row = self.value(v).data().to_vec();
        let mut out = self.value(m).clone();
        for r in out.data_mut().chunks_mut(c) {
            for (x, y) in r.iter_mut().zip(&row) {
                *x += y;
            }
        }
        Ok(self.push(out, Op::AddRow(m, v)))
    }

    pub fn sum_rows(&mut self, m: Var) -> Result<Var> {
        let (_, c) = self.require_matrix("sum-rows", m)?;
        let mut acc = vec![0.0; c];
        for r in self.value(m).iter_rows() {
            for (a, x) in acc.iter_mut().zip(r) {
                *a += x;
            }
        }
        Ok(self.push(Tensor::vector(acc), Op::SumRows(m)))
    }

    pub fn expand_rows(&mut self, v: Var, rows: usize) -> Result<Var> {
        if self.shape(v).len() != 1 || rows == 0 {
            return Err(mismatch("expand-rows", format!("{:?}", self.shape(v))));
        }
        let row = self.value(v).data();
        let mut data = Vec::with_capacity(rows * row.len());
        for _ in 0..rows {
            data.extend_from_slice(row);
        }
        let t = Tensor::matrix(rows, row.len(), data);
        Ok(self.push(t, Op::ExpandRows(v, rows)))
    }

    pub fn sum_cols(&mut self, m: Var) -> Result<Var> {
        self.require_matrix("sum-cols", m)?;
        let data: Vec<f64> = self.value(m).iter_rows().map(|r| r.iter().sum()).collect();
        Ok(self.push(Tensor::vector(data), Op::SumCols(m)))
    }

    pub fn expand_cols(&mut self, v: Var, cols: usize) -> Result<Var> {
        if self.shape(v).len() != 1 || cols == 0 {
            return Err(mismatch("expand-cols", format!("{:?}", self.shape(v))));
        }
        let rows = self.shape(v)[0];
        let mut data = Vec::with_capacity(rows * cols);
        for &x in self.value(v).data() {
            data.extend(std::iter::repeat(x).take(cols));
        }
        Ok(self.push(Tensor::matrix(rows, cols, data), Op::ExpandCols(v, cols)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let s = self.value(a).mean();
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    pub fn expand(&mut self, s: Var, shape: &[usize]) -> Result<Var> {
        if !self.value(s).is_scalar() {
            return Err(mismatch("expand", format!("source {:?}", self.shape(s))));
        }
        let t = Tensor::full(shape, self.value(s).item());
        Ok(self.push(t, Op::Expand(s, shape.to_vec())))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("dot", a, b)?;
        let s: f64 = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .sum();
        Ok(self.push(Tensor::scalar(s), Op::Dot(a, b)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| mismatch("concat", "no inputs".into()))?;
        let (rows, _) = self.require_matrix("concat", first)?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.require_matrix("concat", p)?;
            if r != rows {
                return Err(mismatch("concat", format!("row counts {rows} vs {r}")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let t = Tensor::matrix(rows, total, data);
        Ok(self.push(t, Op::ConcatCols(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.require_matrix("slice", x)?;
        if len == 0 || start + len > cols {
            return Err(mismatch(
                "slice",
                format!("columns {start}..{} of {cols}", start + len),
            ));
        }
        let mut data = Vec::with_capacity(rows * len);
        for r in self.value(x).iter_rows() {
            data.extend_from_slice(&r[start..start + len]);
        }
        let t = Tensor::matrix(rows, len, data);
        Ok(self.push(t, Op::SliceCols { x, start, len }))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self
            .value(x)
            .reshape(shape.clone())
            .map_err(|e| mismatch("reshape", e.to_string()))?;
        Ok(self.push(t, Op::Reshape(x, shape)))
    }

    /// Per-row inner product of two `[B,n]` batches, giving `[B]`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let p = self.mul(a, b)?;
        self.sum_cols(p)
    }

    /// Per-row squared Euclidean norm of a `[B,n]` batch, giving `[B]`.
    pub fn row_sq_norm(&mut self, a: Var) -> Result<Var> {
        let s = self.square(a);
        self.sum_cols(s)
    }

    /// Gradients of a scalar `root` with respect to `wrt`, recorded as graph
    /// nodes. Leaves that `root` does not depend on receive zero constants.
    pub fn grad(&mut self, root: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        if !self.value(root).is_scalar() {
            return Err(OtError::NonScalarRoot(self.shape(root).to_vec()));
        }
        // Nodes up to `root` that depend on at least one requested variable.
        let mut relevant = vec![false; root.0 + 1];
        for &w in wrt {
            if w.0 <= root.0 {
                relevant[w.0] = true;
            }
        }
        for i in 0..=root.0 {
            if !relevant[i] && self.nodes[i].op.parents().iter().any(|p| relevant[p.0]) {
                relevant[i] = true;
            }
        }

        let mut adjoint: HashMap<usize, Var> = HashMap::new();
        let seed = self.scalar(1.0);
        adjoint.insert(root.0, seed);

        for i in (0..=root.0).rev() {
            if !relevant[i] {
                continue;
            }
            let Some(&g) = adjoint.get(&i) else { continue };
            let op = self.nodes[i].op.clone();
            let contributions = self.backward_rule(Var(i), &op, g, &relevant)?;
            for (parent, delta) in contributions {
                let acc = match adjoint.get(&parent.0) {
                    Some(&prev) => self.add(prev, delta)?,
                    None => delta,
                };
                adjoint.insert(parent.0, acc);
            }
        }

        wrt.iter()
            .map(|&w| match adjoint.get(&w.0) {
                Some(&g) => Ok(g),
                None => {
                    let z = Tensor::zeros_like(self.value(w));
                    Ok(self.leaf(z))
                }
            })
            .collect()
    }

    /// Gradient values of a scalar `root` with respect to `wrt`.
    pub fn backward(&mut self, root: Var, wrt: &[Var]) -> Result<Vec<Tensor>> {
        let grads = self.grad(root, wrt)?;
        Ok(grads.into_iter().map(|g| self.value(g).clone()).collect())
    }

    fn mask_leaf(&mut self, of: Var, f: impl Fn(f64) -> f64) -> Var {
        let m = self.value(of).map(f);
        self.leaf(m)
    }

    /// Adjoint contributions `(parent, d root / d parent)` for one node with
    /// incoming adjoint `g`. Parents that are not `relevant` are skipped.
    fn backward_rule(
        &mut self,
        node: Var,
        op: &Op,
        g: Var,
        relevant: &[bool],
    ) -> Result<Vec<(Var, Var)>> {
        let want = |v: &Var| relevant[v.0];
        let mut out = Vec::with_capacity(3);
        match *op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if want(&a) {
                    out.push((a, g));
                }
                if want(&b) {
                    out.push((b, g));
                }
            }
            Op::Sub(a, b) => {
                if want(&a) {
                    out.push((a, g));
                }
                if want(&b) {
                    out.push((b, self.neg(g)));
                }
            }
            Op::Mul(a, b) => {
                if want(&a) {
                    out.push((a, self.mul(g, b)?));
                }
                if want(&b) {
                    out.push((b, self.mul(g, a)?));
                }
            }
            Op::Scale(a, c) => out.push((a, self.scale(g, c))),
            Op::Square(a) => {
                let ga = self.mul(g, a)?;
                out.push((a, self.scale(ga, 2.0)));
            }
            Op::Softplus(a) => {
                let s = self.sigmoid(a);
                out.push((a, self.mul(g, s)?));
            }
            Op::Sigmoid(a) => {
                // σ' = σ - σ²
                let s2 = self.square(node);
                let d = self.sub(node, s2)?;
                out.push((a, self.mul(g, d)?));
            }
            Op::LeakyRelu(a, slope) => {
                let m = self.mask_leaf(a, |x| if x > 0.0 { 1.0 } else { slope });
                out.push((a, self.mul(g, m)?));
            }
            Op::ClampMin(a, lo) => {
                let m = self.mask_leaf(a, |x| if x > lo { 1.0 } else { 0.0 });
                out.push((a, self.mul(g, m)?));
            }
            Op::Affine { x, w, b } => {
                if want(&x) {
                    out.push((x, self.matmul(g, w, false, false)?));
                }
                if want(&w) {
                    out.push((w, self.matmul(g, x, true, false)?));
                }
                if want(&b) {
                    out.push((b, self.sum_rows(g)?));
                }
            }
            Op::MatMul { a, b, ta, tb } => {
                if want(&a) {
                    let da = if ta {
                        self.matmul(b, g, tb, true)?
                    } else {
                        self.matmul(g, b, false, !tb)?
                    };
                    out.push((a, da));
                }
                if want(&b) {
                    let db = if tb {
                        self.matmul(g, a, true, ta)?
                    } else {
                        self.matmul(a, g, !ta, false)?
                    };
                    out.push((b, db));
                }
            }
            Op::AddRow(m, v) => {
                if want(&m) {
                    out.push((m, g));
                }
                if want(&v) {
                    out.push((v, self.sum_rows(g)?));
                }
            }
            Op::SumRows(m) => {
                let rows = self.shape(m)[0];
                out.push((m, self.expand_rows(g, rows)?));
            }
            Op::ExpandRows(v, _) => out.push((v, self.sum_rows(g)?)),
            Op::SumCols(m) => {
                let cols = self.shape(m)[1];
                out.push((m, self.expand_cols(g, cols)?));
            }
            Op::ExpandCols(v, _) => out.push((v, self.sum_cols(g)?)),
            Op::Sum(a) => {
                let shape = self.shape(a).to_vec();
                out.push((a, self.expand(g, &shape)?));
            }
            Op::Mean(a) => {
                let shape = self.shape(a).to_vec();
                let n = self.value(a).len() as f64;
                let e = self.expand(g, &shape)?;
                out.push((a, self.scale(e, 1.0 / n)));
            }
            Op::Expand(s, _) => out.push((s, self.sum(g))),
            Op::Dot(a, b) => {
                let shape = self.shape(a).to_vec();
                let e = self.expand(g, &shape)?;
                if want(&a) {
                    out.push((a, self.mul(e, b)?));
                }
                if want(&b) {
                    out.push((b, self.mul(e, a)?));
                }
            }
            Op::ConcatCols(ref parts) => {
                let mut start = 0;
                for &p in parts {
                    let w = self.shape(p)[1];
                    if want(&p) {
                        out.push((p, self.slice_cols(g, start, w)?));
                    }
                    start += w;
                }
            }
            Op::SliceCols { x, start, len } => {
                let (rows, cols) = (self.shape(x)[0], self.shape(x)[1]);
                let mut parts = Vec::with_capacity(3);
                if start > 0 {
                    parts.push(self.leaf(Tensor::zeros(&[rows, start])));
                }
                parts.push(g);
                if start + len < cols {
                    parts.push(self.leaf(Tensor::zeros(&[rows, cols - start - len])));
                }
                out.push((x, self.concat_cols(&parts)?));
            }
            Op::Reshape(x, _) => {
                let shape = self.shape(x).to_vec();
                out.push((x, self.reshape(g, shape)?));
            }
        }
        Ok(out)
    }
}
