//! Define-by-run gradient graph.
//!
//! Every operation evaluates eagerly and appends one record. Records are
//! stored in execution order, so the node vector is already a topological
//! order and the backward pass is a single reverse sweep. A graph is
//! back-propagated at most once; a second `backward` call is an error.

use std::collections::BTreeMap;
use std::fmt;

use sha2::{Digest, Sha256};

use super::kernels::{self, gemm};
use super::{DType, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Gradient rules that can be deliberately corrupted to exercise the
/// finite-difference checker.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FaultKind {
    MatMul,
    Softmax,
    LayerNorm,
    Gelu,
}

enum Op {
    Constant,
    Param(String),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        active: Vec<bool>,
        probs: Vec<f64>,
        count: usize,
    },
    Sum(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Gelu(_) => "gelu",
            Op::Softmax(_) => "softmax_rows",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Gather { .. } => "gather_rows",
            Op::SliceRows { .. } => "slice_rows",
            Op::SliceCols { .. } => "slice_cols",
            Op::ConcatRows(_) => "concat_rows",
            Op::ConcatCols(_) => "concat_cols",
            Op::CrossEntropy { .. } => "cross_entropy_masked",
            Op::Sum(_) => "sum",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Constant | Op::Param(_) => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::AddRow(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Transpose(x) | Op::Scale(x, _) | Op::Gelu(x) | Op::Softmax(x) | Op::Sum(x) => {
                vec![*x]
            }
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Gather { table, .. } => vec![*table],
            Op::SliceRows { x, .. } | Op::SliceCols { x, .. } => vec![*x],
            Op::ConcatRows(v) | Op::ConcatCols(v) => v.clone(),
            Op::CrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    tracks: bool,
}

/// Per-parameter gradients keyed by parameter name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    grads: BTreeMap<String, Tensor>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.grads.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.grads.iter()
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn insert(&mut self, name: impl Into<String>, grad: Tensor) {
        self.grads.insert(name.into(), grad);
    }

    /// Adds zero gradients for every parameter in `store` that the loss never reached.
    pub fn fill_unreached(&mut self, store: &ParamStore) {
        for (name, t) in store.iter() {
            self.grads
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(t.shape()));
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.grads.values_mut() {
            for v in g.data_mut() {
                *v *= factor;
            }
        }
    }
}

/// Ordered op-kind/shape/parameter-name record of one forward pass.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GraphSignature(Vec<String>);

impl GraphSignature {
    pub fn entries(&self) -> &[String] {
        &self.0
    }

    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for e in &self.0 {
            h.update(e.as_bytes());
            h.update(b"\n");
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl fmt::Display for GraphSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.0 {
            writeln!(f, "{e}")?;
        }
        Ok(())
    }
}

pub struct Graph {
    dtype: DType,
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
    consumed: bool,
    fault: Option<FaultKind>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new(DType::F64)
    }
}

impl Graph {
    pub fn new(dtype: DType) -> Self {
        Self {
            dtype,
            nodes: Vec::new(),
            params: BTreeMap::new(),
            consumed: false,
            fault: None,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Corrupts one gradient rule (its input gradients are scaled by 1.5).
    /// Exists so the gradient checker can be shown to catch a broken rule.
    #[doc(hidden)]
    pub fn inject_fault(&mut self, kind: FaultKind) {
        self.fault = Some(kind);
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, mut value: Tensor, op: Op) -> Var {
        value.set_dtype(self.dtype);
        let tracks = match &op {
            Op::Constant => false,
            Op::Param(_) => true,
            other => other.inputs().iter().any(|v| self.nodes[v.0].tracks),
        };
        self.nodes.push(Node { value, op, tracks });
        Var(self.nodes.len() - 1)
    }

    /// Records a value that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant)
    }

    /// Records a named parameter from `store`. Repeated uses of the same name
    /// share one handle, so gradients from every use accumulate.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let t = store
            .get(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?
            .clone();
        Ok(self.register_param(name, t))
    }

    /// Records a named gradient-tracking leaf not backed by a store.
    pub fn param_tensor(&mut self, name: &str, t: Tensor) -> Var {
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        self.register_param(name, t)
    }

    fn register_param(&mut self, name: &str, t: Tensor) -> Var {
        let v = self.push(t, Op::Param(name.to_string()));
        self.params.insert(name.to_string(), v);
        v
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> Error {
        Error::ShapeMismatch {
            op,
            left: self.shape(a).to_vec(),
            right: self.shape(b).to_vec(),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let out = kernels::transpose(self.value(x))?;
        Ok(self.push(out, Op::Transpose(x)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch("add", a, b));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let out = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Adds a bias vector to every row of a matrix.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let cols = self.value(x).cols();
        if self.shape(bias) != [cols] || self.value(x).rank() == 0 {
            return Err(self.mismatch("add_row", x, bias));
        }
        let b = self.value(bias).data();
        let data = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + b[i % cols])
            .collect();
        let out = Tensor::new(self.shape(x).to_vec(), data)?;
        Ok(self.push(out, Op::AddRow(x, bias)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch("mul", a, b));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let out = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let data = self.value(x).data().iter().map(|v| v * factor).collect();
        let out = Tensor::new(self.shape(x).to_vec(), data).expect("shape preserved");
        self.push(out, Op::Scale(x, factor))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = kernels::gelu(self.value(x));
        self.push(out, Op::Gelu(x))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let out = kernels::softmax_rows(self.value(x));
        self.push(out, Op::Softmax(x))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (out, cache) =
            kernels::layer_norm_cached(self.value(x), self.value(gamma), self.value(beta), eps)?;
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat: cache.xhat,
                rstd: cache.rstd,
            },
        ))
    }

    /// Row lookup `table[ids[i]]`, producing `[ids.len() x cols]`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (rows, cols) = t.require_matrix("gather_rows")?;
        let mut data = Vec::with_capacity(ids.len() * cols);
        for (position, &id) in ids.iter().enumerate() {
            if id >= rows {
                return Err(Error::TokenOutOfRange {
                    position,
                    id,
                    vocab: rows,
                });
            }
            data.extend_from_slice(t.row(id));
        }
        let out = Tensor::new(vec![ids.len(), cols], data)?;
        Ok(self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        let (rows, cols) = t.require_matrix("slice_rows")?;
        if start + len > rows {
            return Err(Error::ShapeMismatch {
                op: "slice_rows",
                left: t.shape().to_vec(),
                right: vec![start, len],
            });
        }
        let out = Tensor::new(
            vec![len, cols],
            t.data()[start * cols..(start + len) * cols].to_vec(),
        )?;
        Ok(self.push(out, Op::SliceRows { x, start }))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        let (rows, cols) = t.require_matrix("slice_cols")?;
        if start + len > cols {
            return Err(Error::ShapeMismatch {
                op: "slice_cols",
                left: t.shape().to_vec(),
                right: vec![start, len],
            });
        }
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&t.row(r)[start..start + len]);
        }
        let out = Tensor::new(vec![rows, len], data)?;
        Ok(self.push(out, Op::SliceCols { x, start }))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::ShapeMismatch {
            op: "concat_rows",
            left: vec![],
            right: vec![],
        })?;
        let (_, cols) = self.value(first).require_matrix("concat_rows")?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            let (r, c) = t.require_matrix("concat_rows")?;
            if c != cols {
                return Err(self.mismatch("concat_rows", first, p));
            }
            rows += r;
            data.extend_from_slice(t.data());
        }
        let out = Tensor::new(vec![rows, cols], data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::ShapeMismatch {
            op: "concat_cols",
            left: vec![],
            right: vec![],
        })?;
        let (rows, _) = self.value(first).require_matrix("concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).require_matrix("concat_cols")?;
            if r != rows {
                return Err(self.mismatch("concat_cols", first, p));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Tensor::new(vec![rows, total], data)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    /// Mean negative log-likelihood over the active rows; inactive rows are ignored.
    pub fn cross_entropy_masked(
        &mut self,
        logits: Var,
        labels: &[usize],
        active: &[bool],
    ) -> Result<Var> {
        let (loss, probs, count) = kernels::cross_entropy_cached(self.value(logits), labels, active)?;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                active: active.to_vec(),
                probs,
                count,
            },
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn signature(&self) -> GraphSignature {
        let entries = self
            .nodes
            .iter()
            .map(|n| {
                let ins: Vec<String> = n.op.inputs().iter().map(|v| v.0.to_string()).collect();
                let extra = match &n.op {
                    Op::Param(name) => format!(" {name}"),
                    Op::Scale(_, f) => format!(" {f:e}"),
                    Op::SliceRows { start, .. } | Op::SliceCols { start, .. } => {
                        format!(" @{start}")
                    }
                    _ => String::new(),
                };
                format!(
                    "{}({}){} -> {:?}",
                    n.op.name(),
                    ins.join(","),
                    extra,
                    n.value.shape()
                )
            })
            .collect();
        GraphSignature(entries)
    }

    fn fault_factor(&self, kind: FaultKind) -> f64 {
        if self.fault == Some(kind) {
            1.5
        } else {
            1.0
        }
    }

    /// Reverse sweep from a scalar `loss`. Returns gradients for every
    /// parameter recorded in this graph; parameters the loss does not depend
    /// on receive zeros. The graph is consumed: calling this twice errors.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::default();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.tracks {
                continue;
            }
            match &node.op {
                Op::Constant => {}
                Op::Param(name) => {
                    out.insert(name.clone(), Tensor::new(node.value.shape().to_vec(), g)?);
                }
                Op::MatMul(a, b) => {
                    let f = self.fault_factor(FaultKind::MatMul);
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k) = (ta.shape()[0], ta.shape()[1]);
                    let n = tb.shape()[1];
                    if self.nodes[a.0].tracks {
                        let mut da = vec![0.0; m * k];
                        gemm(m, n, k, &g, false, tb.data(), true, &mut da, 0.0);
                        if f != 1.0 {
                            da.iter_mut().for_each(|v| *v *= f);
                        }
                        accumulate(&mut grads, *a, &da);
                    }
                    if self.nodes[b.0].tracks {
                        let mut db = vec![0.0; k * n];
                        gemm(k, m, n, ta.data(), true, &g, false, &mut db, 0.0);
                        accumulate(&mut grads, *b, &db);
                    }
                }
                Op::Transpose(x) => {
                    let (r, c) = (node.value.shape()[0], node.value.shape()[1]);
                    // output is r x c, input is c x r
                    let mut dx = vec![0.0; r * c];
                    for p in 0..r {
                        for q in 0..c {
                            dx[q * r + p] = g[p * c + q];
                        }
                    }
                    accumulate(&mut grads, *x, &dx);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, &g);
                    accumulate(&mut grads, *b, &g);
                }
                Op::AddRow(x, bias) => {
                    let cols = node.value.cols();
                    let mut db = vec![0.0; cols];
                    for row in g.chunks(cols) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    accumulate(&mut grads, *x, &g);
                    accumulate(&mut grads, *bias, &db);
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                    let da: Vec<f64> = g.iter().zip(tb).map(|(g, y)| g * y).collect();
                    let db: Vec<f64> = g.iter().zip(ta).map(|(g, x)| g * x).collect();
                    accumulate(&mut grads, *a, &da);
                    accumulate(&mut grads, *b, &db);
                }
                Op::Scale(x, factor) => {
                    let dx: Vec<f64> = g.iter().map(|v| v * factor).collect();
                    accumulate(&mut grads, *x, &dx);
                }
                Op::Gelu(x) => {
                    let f = self.fault_factor(FaultKind::Gelu);
                    let dx: Vec<f64> = g
                        .iter()
                        .zip(self.value(*x).data())
                        .map(|(g, &v)| f * g * kernels::gelu_grad_scalar(v))
                        .collect();
                    accumulate(&mut grads, *x, &dx);
                }
                Op::Softmax(x) => {
                    let f = self.fault_factor(FaultKind::Softmax);
                    let cols = node.value.cols();
                    let y = node.value.data();
                    let mut dx = vec![0.0; y.len()];
                    for r in 0..node.value.rows() {
                        let span = r * cols..(r + 1) * cols;
                        let dot: f64 = g[span.clone()].iter().zip(&y[span.clone()]).map(|(a, b)| a * b).sum();
                        for j in span {
                            dx[j] = f * y[j] * (g[j] - dot);
                        }
                    }
                    accumulate(&mut grads, *x, &dx);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    rstd,
                } => {
                    let f = self.fault_factor(FaultKind::LayerNorm);
                    let h = node.value.cols();
                    let gam = self.value(*gamma).data();
                    let mut dgamma = vec![0.0; h];
                    let mut dbeta = vec![0.0; h];
                    let mut dx = vec![0.0; g.len()];
                    let mut dxhat = vec![0.0; h];
                    for r in 0..node.value.rows() {
                        let gr = &g[r * h..(r + 1) * h];
                        let xr = &xhat[r * h..(r + 1) * h];
                        let mut mean_d = 0.0;
                        let mut mean_dx = 0.0;
                        for j in 0..h {
                            dgamma[j] += gr[j] * xr[j];
                            dbeta[j] += gr[j];
                            dxhat[j] = gr[j] * gam[j];
                            mean_d += dxhat[j];
                            mean_dx += dxhat[j] * xr[j];
                        }
                        mean_d /= h as f64;
                        mean_dx /= h as f64;
                        for j in 0..h {
                            dx[r * h + j] = f * rstd[r] * (dxhat[j] - mean_d - xr[j] * mean_dx);
                        }
                    }
                    accumulate(&mut grads, *x, &dx);
                    accumulate(&mut grads, *gamma, &dgamma);
                    accumulate(&mut grads, *beta, &dbeta);
                }
                Op::Gather { table, ids } => {
                    let t = self.value(*table);
                    let cols = t.cols();
                    let mut dt = vec![0.0; t.numel()];
                    for (row, &id) in ids.iter().enumerate() {
                        for j in 0..cols {
                            dt[id * cols + j] += g[row * cols + j];
                        }
                    }
                    accumulate(&mut grads, *table, &dt);
                }
                Op::SliceRows { x, start } => {
                    let src = self.value(*x);
                    let cols = src.cols();
                    let mut dx = vec![0.0; src.numel()];
                    dx[start * cols..start * cols + g.len()].copy_from_slice(&g);
                    accumulate(&mut grads, *x, &dx);
                }
                Op::SliceCols { x, start } => {
                    let src = self.value(*x);
                    let cols = src.cols();
                    let len = node.value.cols();
                    let mut dx = vec![0.0; src.numel()];
                    for r in 0..src.rows() {
                        dx[r * cols + start..r * cols + start + len]
                            .copy_from_slice(&g[r * len..(r + 1) * len]);
                    }
                    accumulate(&mut grads, *x, &dx);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let n = self.value(*p).numel();
                        accumulate(&mut grads, *p, &g[offset..offset + n]);
                        offset += n;
                    }
                }
                Op::ConcatCols(parts) => {
                    let total = node.value.cols();
                    let rows = node.value.rows();
                    let mut offset = 0;
                    for p in parts {
                        let w = self.value(*p).cols();
                        let mut dp = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            dp.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                        }
                        accumulate(&mut grads, *p, &dp);
                        offset += w;
                    }
                }
                Op::CrossEntropy {
                    logits,
                    labels,
                    active,
                    probs,
                    count,
                } => {
                    let vocab = self.value(*logits).cols();
                    let scale = g[0] / *count as f64;
                    let mut dl = vec![0.0; probs.len()];
                    for (r, &on) in active.iter().enumerate() {
                        if !on {
                            continue;
                        }
                        for j in 0..vocab {
                            dl[r * vocab + j] = scale * probs[r * vocab + j];
                        }
                        dl[r * vocab + labels[r]] -= scale;
                    }
                    accumulate(&mut grads, *logits, &dl);
                }
                Op::Sum(x) => {
                    let dx = vec![g[0]; self.value(*x).numel()];
                    accumulate(&mut grads, *x, &dx);
                }
            }
        }

        for (name, &v) in &self.params {
            if !out.grads.contains_key(name) {
                out.insert(name.clone(), Tensor::zeros(self.shape(v)));
            }
        }
        Ok(out)
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, contribution: &[f64]) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, c) in acc.iter_mut().zip(contribution) {
                *a += c;
            }
        }
        slot @ None => *slot = Some(contribution.to_vec()),
    }
}
