//! Define-by-run reverse-mode differentiation.
//!
//! A [`Graph`] records every operation as it executes. Node indices are
//! assigned in execution order, so walking them backwards is a valid
//! topological order for gradient propagation. Parameters enter the graph as
//! borrowed leaves; their gradients are written to an external
//! [`Gradients`] sink so that embedding lookups can scatter rows directly
//! instead of materialising a dense table-sized gradient per graph.

use std::borrow::Cow;

use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::{matmul_into, matmul_nt_into, matmul_tn_into, transpose_into, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Tanh,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    ScaleRows(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Ln(Var),
    Clamp(Var, f64, f64),
    Softmax {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    MaskedSoftmax(Var),
    SumAll(Var),
    SumSquares(Var),
    Gather(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    BroadcastRows(Var),
    LayerNorm(Var, Vec<f64>),
    StopGrad(Var),
    Reshape(Var),
}

struct Node<'p> {
    value: Cow<'p, Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation for one forward pass.
pub struct Graph<'p> {
    nodes: Vec<Node<'p>>,
    params: Option<&'p ParamStore>,
    param_vars: Vec<Option<Var>>,
    track_params: bool,
    grads: Vec<Option<Vec<f64>>>,
    frozen: Option<(Vec<Tensor>, usize)>,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape(format!("{op}: {a:?} vs {b:?}"))
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl<'p> Graph<'p> {
    /// A graph with no parameter store; only explicit leaves are available.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: None,
            param_vars: Vec::new(),
            track_params: false,
            grads: Vec::new(),
            frozen: None,
        }
    }

    /// A graph whose parameter leaves require gradients.
    pub fn with_params(store: &'p ParamStore) -> Self {
        Self {
            params: Some(store),
            param_vars: vec![None; store.len()],
            track_params: true,
            ..Self::new()
        }
    }

    /// A graph over parameters that records no gradient requirements.
    pub fn inference(store: &'p ParamStore) -> Self {
        Self {
            track_params: false,
            ..Self::with_params(store)
        }
    }

    /// Makes the k-th `stop_gradient` call return `values[k]` instead of its
    /// input, so stopped paths behave as constants under perturbation.
    pub fn with_frozen_stops(mut self, values: Vec<Tensor>) -> Self {
        self.frozen = Some((values, 0));
        self
    }

    /// Values of all stop-gradient nodes in creation order.
    pub fn stopped_values(&self) -> Vec<Tensor> {
        self.stop_gradient_edges().into_iter().map(|(v, _)| self.val(v).clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn val(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.val(v)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.val(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Scalar value of a single-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.val(v).data()[0]
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Leaf for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let store = self.params.expect("graph has no parameter store");
        self.nodes.push(Node {
            value: Cow::Borrowed(store.get(id)),
            op: Op::Param(id),
            requires_grad: self.track_params,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        matmul_into(self.val(a).data(), self.val(b).data(), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.val(a).transpose()?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::Transpose(a), rg))
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let data = self
            .val(a)
            .data()
            .iter()
            .zip(self.val(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::from_parts(self.shape(a).to_vec(), data);
        let rg = self.rg(a) || self.rg(b);
        self.push(t, op, rg)
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let data = self.val(a).data().iter().map(|&x| f(x)).collect();
        let t = Tensor::from_parts(self.shape(a).to_vec(), data);
        let rg = self.rg(a);
        self.push(t, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_with(a, b, |x, y| x + y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_with(a, b, |x, y| x - y, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_with(a, b, |x, y| x * y, Op::Mul(a, b)))
    }

    fn row_broadcast_check(&self, op: &str, a: Var, row: Var) -> Result<(usize, usize)> {
        let (sa, sr) = (self.shape(a), self.shape(row));
        let n = *sa.last().unwrap();
        if sa.len() != 2 || sr.iter().product::<usize>() != n || *sr.last().unwrap() != n {
            return Err(shape_err(op, sa, sr));
        }
        Ok((sa[0], n))
    }

    /// `a (m×n) + row (1×n)` broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.row_broadcast_check("add_row", a, row)?;
        let r = self.val(row).data();
        let mut out = self.val(a).data().to_vec();
        for i in 0..m {
            add_into(&mut out[i * n..(i + 1) * n], r);
        }
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::AddRow(a, row), rg))
    }

    /// `a (m×n) ⊙ row (1×n)` broadcast over rows.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.row_broadcast_check("mul_row", a, row)?;
        let r = self.val(row).data();
        let mut out = self.val(a).data().to_vec();
        for i in 0..m {
            for (o, &s) in out[i * n..(i + 1) * n].iter_mut().zip(r) {
                *o *= s;
            }
        }
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MulRow(a, row), rg))
    }

    /// Scales row `i` of `a (m×n)` by `w[i]`, where `w` is `m×1`.
    pub fn scale_rows(&mut self, a: Var, w: Var) -> Result<Var> {
        let (sa, sw) = (self.shape(a), self.shape(w));
        if sa.len() != 2 || sw.iter().product::<usize>() != sa[0] {
            return Err(shape_err("scale_rows", sa, sw));
        }
        let (m, n) = (sa[0], sa[1]);
        let wv = self.val(w).data();
        let mut out = self.val(a).data().to_vec();
        for i in 0..m {
            out[i * n..(i + 1) * n].iter_mut().for_each(|o| *o *= wv[i]);
        }
        let rg = self.rg(a) || self.rg(w);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::ScaleRows(a, w), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.map(a, |x| x * c, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.map(a, |x| x + c, Op::AddScalar(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.map(a, f64::ln, Op::Ln(a))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.map(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    pub fn activate(&mut self, a: Var, act: Activation) -> Var {
        match act {
            Activation::Identity => a,
            Activation::Relu => self.relu(a),
            Activation::Sigmoid => self.sigmoid(a),
            Activation::Tanh => self.tanh(a),
        }
    }

    /// Max-stabilised softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::Shape(format!("softmax axis {axis} for shape {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.val(x).data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * len + k) * inner + i;
                let max = (0..len).map(|k| src[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for k in 0..len {
                    let e = (src[idx(k)] - max).exp();
                    out[idx(k)] = e;
                    total += e;
                }
                for k in 0..len {
                    out[idx(k)] /= total;
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::Softmax {
                x,
                outer,
                len,
                inner,
            },
            rg,
        ))
    }

    /// Row-wise softmax restricted to `allowed` entries (same layout as `x`).
    /// Disallowed entries are exactly zero; a row with no allowed entry is all
    /// zeros.
    pub fn masked_softmax_rows(&mut self, x: Var, allowed: &[bool]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 || allowed.len() != shape[0] * shape[1] {
            return Err(Error::Shape(format!(
                "masked softmax of {shape:?} with {} mask entries",
                allowed.len()
            )));
        }
        let (m, n) = (shape[0], shape[1]);
        let src = self.val(x).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let ok = &allowed[i * n..(i + 1) * n];
            let max = row
                .iter()
                .zip(ok)
                .filter(|(_, &a)| a)
                .map(|(&v, _)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let dst = &mut out[i * n..(i + 1) * n];
            let mut total = 0.0;
            for j in 0..n {
                if ok[j] {
                    dst[j] = (row[j] - max).exp();
                    total += dst[j];
                }
            }
            dst.iter_mut().for_each(|v| *v /= total);
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::from_parts(shape, out), Op::MaskedSoftmax(x), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.val(a).sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::SumAll(a), rg)
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let s = self.val(a).data().iter().map(|v| v * v).sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::SumSquares(a), rg)
    }

    /// Selects rows of a 2-D table.
    pub fn gather(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let shape = self.shape(table);
        if shape.len() != 2 || indices.is_empty() {
            return Err(Error::Shape(format!(
                "gather of {} rows from {shape:?}",
                indices.len()
            )));
        }
        let (rows, n) = (shape[0], shape[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::InvalidArgument(format!(
                "index {bad} out of range for table with {rows} rows"
            )));
        }
        let t = self.val(table);
        let mut out = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            out.extend_from_slice(t.row_slice(i));
        }
        let rg = self.rg(table);
        Ok(self.push(
            Tensor::from_parts(vec![indices.len(), n], out),
            Op::Gather(table, indices.to_vec()),
            rg,
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let m = self.shape(parts[0])[0];
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[0] != m {
                return Err(shape_err("concat_cols", self.shape(parts[0]), s));
            }
        }
        let total: usize = parts.iter().map(|&p| self.shape(p)[1]).sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                out.extend_from_slice(self.val(p).row_slice(i));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Tensor::from_parts(vec![m, total], out),
            Op::ConcatCols(parts.to_vec()),
            rg,
        ))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 || start >= end || end > s[1] {
            return Err(Error::Shape(format!("slice_cols {start}..{end} of {s:?}")));
        }
        let (m, w) = (s[0], end - start);
        let t = self.val(a);
        let mut out = Vec::with_capacity(m * w);
        for i in 0..m {
            out.extend_from_slice(&t.row_slice(i)[start..end]);
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::from_parts(vec![m, w], out), Op::SliceCols(a, start), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let n = self.shape(parts[0])[1];
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[1] != n {
                return Err(shape_err("concat_rows", self.shape(parts[0]), s));
            }
        }
        let m: usize = parts.iter().map(|&p| self.shape(p)[0]).sum();
        let mut out = Vec::with_capacity(m * n);
        for &p in parts {
            out.extend_from_slice(self.val(p).data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Tensor::from_parts(vec![m, n], out),
            Op::ConcatRows(parts.to_vec()),
            rg,
        ))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 || start >= end || end > s[0] {
            return Err(Error::Shape(format!("slice_rows {start}..{end} of {s:?}")));
        }
        let n = s[1];
        let out = self.val(a).data()[start * n..end * n].to_vec();
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::from_parts(vec![end - start, n], out),
            Op::SliceRows(a, start),
            rg,
        ))
    }

    /// Repeats a `1×n` row `m` times.
    pub fn broadcast_rows(&mut self, a: Var, m: usize) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 || s[0] != 1 || m == 0 {
            return Err(Error::Shape(format!("broadcast_rows of {s:?} to {m} rows")));
        }
        let n = s[1];
        let row = self.val(a).data();
        let mut out = Vec::with_capacity(m * n);
        for _ in 0..m {
            out.extend_from_slice(row);
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::BroadcastRows(a), rg))
    }

    /// Normalises each row to zero mean and unit variance (no affine part).
    pub fn layer_norm_rows(&mut self, a: Var, eps: f64) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(Error::Shape(format!("layer_norm of {s:?}")));
        }
        let (m, n) = (s[0], s[1]);
        let src = self.val(a).data();
        let mut out = vec![0.0; m * n];
        let mut inv_std = Vec::with_capacity(m);
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            for (o, v) in out[i * n..(i + 1) * n].iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
            inv_std.push(is);
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::LayerNorm(a, inv_std), rg))
    }

    /// Same values under a new shape with equal element count.
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = Tensor::new(shape.to_vec(), self.val(a).data().to_vec())
            .map_err(|_| shape_err("reshape", self.shape(a), shape))?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::Reshape(a), rg))
    }

    /// Identity in the forward pass; blocks gradient flow into `a`.
    pub fn stop_gradient(&mut self, a: Var) -> Var {
        let t = match &mut self.frozen {
            Some((values, next)) if *next < values.len() && values[*next].shape() == self.nodes[a.0].value.shape() => {
                *next += 1;
                values[*next - 1].clone()
            }
            _ => self.val(a).clone(),
        };
        self.push(t, Op::StopGrad(a), false)
    }

    /// Nodes whose outgoing gradient is blocked, as `(marker, source)` pairs.
    pub fn stop_gradient_edges(&self) -> Vec<(Var, Var)> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::StopGrad(src) => Some((Var(i), src)),
                _ => None,
            })
            .collect()
    }

    /// Gradient of the last backward pass with respect to `v`.
    ///
    /// Nodes that require a gradient but received no contribution (for
    /// example, reachable only through stop-gradient edges) report zeros.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        if !self.rg(v) {
            return None;
        }
        let shape = self.shape(v).to_vec();
        Some(match self.grads.get(v.0).and_then(Option::as_ref) {
            Some(g) => Tensor::from_parts(shape, g.clone()),
            None => Tensor::zeros(&shape),
        })
    }

    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.run_backward(loss, None)
    }

    /// Backward pass that also accumulates parameter gradients into `sink`.
    pub fn backward_into(&mut self, loss: Var, sink: &mut Gradients) -> Result<()> {
        self.run_backward(loss, Some(sink))
    }

    fn run_backward(&mut self, loss: Var, mut sink: Option<&mut Gradients>) -> Result<()> {
        if self.val(loss).len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        if self.rg(loss) {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.propagate(i, &g, &mut grads, sink.as_deref_mut());
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(
        &self,
        i: usize,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        sink: Option<&mut Gradients>,
    ) {
        let nodes = &self.nodes;
        let out = &nodes[i].value;
        // Lazily allocated accumulator for an input node.
        let acc = |v: Var, grads: &mut [Option<Vec<f64>>], f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let buf = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
            f(buf);
        };
        match &nodes[i].op {
            Op::Leaf | Op::StopGrad(_) => {}
            Op::Param(id) => {
                if let Some(sink) = sink {
                    add_into(sink.get_mut(*id).data_mut(), g);
                }
            }
            &Op::MatMul(a, b) => {
                let (sa, sb) = (nodes[a.0].value.shape(), nodes[b.0].value.shape());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let bd = nodes[b.0].value.data();
                let ad = nodes[a.0].value.data();
                acc(a, grads, &mut |da| matmul_nt_into(g, bd, da, m, n, k));
                acc(b, grads, &mut |db| matmul_tn_into(ad, g, db, m, k, n));
            }
            &Op::Transpose(a) => {
                let s = out.shape();
                let (r, c) = (s[0], s[1]);
                acc(a, grads, &mut |da| {
                    let mut tmp = vec![0.0; r * c];
                    transpose_into(g, &mut tmp, r, c);
                    add_into(da, &tmp);
                });
            }
            &Op::Add(a, b) => {
                acc(a, grads, &mut |da| add_into(da, g));
                acc(b, grads, &mut |db| add_into(db, g));
            }
            &Op::Sub(a, b) => {
                acc(a, grads, &mut |da| add_into(da, g));
                acc(b, grads, &mut |db| db.iter_mut().zip(g).for_each(|(d, x)| *d -= x));
            }
            &Op::Mul(a, b) => {
                let (ad, bd) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                acc(a, grads, &mut |da| {
                    for ((d, x), y) in da.iter_mut().zip(g).zip(bd) {
                        *d += x * y;
                    }
                });
                acc(b, grads, &mut |db| {
                    for ((d, x), y) in db.iter_mut().zip(g).zip(ad) {
                        *d += x * y;
                    }
                });
            }
            &Op::AddRow(a, row) => {
                let n = out.cols();
                acc(a, grads, &mut |da| add_into(da, g));
                acc(row, grads, &mut |dr| {
                    for chunk in g.chunks(n) {
                        add_into(dr, chunk);
                    }
                });
            }
            &Op::MulRow(a, row) => {
                let n = out.cols();
                let (ad, rd) = (nodes[a.0].value.data(), nodes[row.0].value.data());
                acc(a, grads, &mut |da| {
                    for (k, d) in da.iter_mut().enumerate() {
                        *d += g[k] * rd[k % n];
                    }
                });
                acc(row, grads, &mut |dr| {
                    for k in 0..g.len() {
                        dr[k % n] += g[k] * ad[k];
                    }
                });
            }
            &Op::ScaleRows(a, w) => {
                let n = out.cols();
                let (ad, wd) = (nodes[a.0].value.data(), nodes[w.0].value.data());
                acc(a, grads, &mut |da| {
                    for (k, d) in da.iter_mut().enumerate() {
                        *d += g[k] * wd[k / n];
                    }
                });
                acc(w, grads, &mut |dw| {
                    for k in 0..g.len() {
                        dw[k / n] += g[k] * ad[k];
                    }
                });
            }
            &Op::Scale(a, c) => acc(a, grads, &mut |da| {
                da.iter_mut().zip(g).for_each(|(d, x)| *d += c * x)
            }),
            &Op::AddScalar(a) | &Op::Reshape(a) => acc(a, grads, &mut |da| add_into(da, g)),
            &Op::Relu(a) => {
                let ad = nodes[a.0].value.data();
                acc(a, grads, &mut |da| {
                    for ((d, x), v) in da.iter_mut().zip(g).zip(ad) {
                        if *v > 0.0 {
                            *d += x;
                        }
                    }
                });
            }
            &Op::Sigmoid(a) => {
                let y = out.data();
                acc(a, grads, &mut |da| {
                    for ((d, x), y) in da.iter_mut().zip(g).zip(y) {
                        *d += x * y * (1.0 - y);
                    }
                });
            }
            &Op::Tanh(a) => {
                let y = out.data();
                acc(a, grads, &mut |da| {
                    for ((d, x), y) in da.iter_mut().zip(g).zip(y) {
                        *d += x * (1.0 - y * y);
                    }
                });
            }
            &Op::Ln(a) => {
                let ad = nodes[a.0].value.data();
                acc(a, grads, &mut |da| {
                    for ((d, x), v) in da.iter_mut().zip(g).zip(ad) {
                        *d += x / v;
                    }
                });
            }
            &Op::Clamp(a, lo, hi) => {
                let ad = nodes[a.0].value.data();
                acc(a, grads, &mut |da| {
                    for ((d, x), v) in da.iter_mut().zip(g).zip(ad) {
                        if *v >= lo && *v <= hi {
                            *d += x;
                        }
                    }
                });
            }
            &Op::Softmax {
                x,
                outer,
                len,
                inner,
            } => {
                let y = out.data();
                acc(x, grads, &mut |dx| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |k: usize| (o * len + k) * inner + i;
                            let s: f64 = (0..len).map(|k| g[idx(k)] * y[idx(k)]).sum();
                            for k in 0..len {
                                dx[idx(k)] += y[idx(k)] * (g[idx(k)] - s);
                            }
                        }
                    }
                });
            }
            &Op::MaskedSoftmax(x) => {
                let n = out.cols();
                let y = out.data();
                acc(x, grads, &mut |dx| {
                    for (r, (yr, gr)) in y.chunks(n).zip(g.chunks(n)).enumerate() {
                        let s: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            dx[r * n + j] += yr[j] * (gr[j] - s);
                        }
                    }
                });
            }
            &Op::SumAll(a) => acc(a, grads, &mut |da| da.iter_mut().for_each(|d| *d += g[0])),
            &Op::SumSquares(a) => {
                let ad = nodes[a.0].value.data();
                acc(a, grads, &mut |da| {
                    for (d, v) in da.iter_mut().zip(ad) {
                        *d += 2.0 * v * g[0];
                    }
                });
            }
            Op::Gather(table, indices) => {
                let table = *table;
                let n = out.cols();
                if !nodes[table.0].requires_grad {
                    return;
                }
                // Scatter straight into the parameter sink when possible.
                if let (Op::Param(id), Some(sink)) = (&nodes[table.0].op, sink) {
                    let dst = sink.get_mut(*id);
                    for (r, &row) in indices.iter().enumerate() {
                        add_into(dst.row_slice_mut(row), &g[r * n..(r + 1) * n]);
                    }
                } else {
                    acc(table, grads, &mut |dt| {
                        for (r, &row) in indices.iter().enumerate() {
                            add_into(&mut dt[row * n..(row + 1) * n], &g[r * n..(r + 1) * n]);
                        }
                    });
                }
            }
            Op::ConcatCols(parts) => {
                let total = out.cols();
                let m = out.rows();
                let mut offset = 0;
                for &p in parts {
                    let w = nodes[p.0].value.cols();
                    acc(p, grads, &mut |dp| {
                        for r in 0..m {
                            add_into(
                                &mut dp[r * w..(r + 1) * w],
                                &g[r * total + offset..r * total + offset + w],
                            );
                        }
                    });
                    offset += w;
                }
            }
            &Op::SliceCols(a, start) => {
                let w = out.cols();
                let n = nodes[a.0].value.cols();
                acc(a, grads, &mut |da| {
                    for r in 0..out.rows() {
                        add_into(&mut da[r * n + start..r * n + start + w], &g[r * w..(r + 1) * w]);
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = nodes[p.0].value.len();
                    acc(p, grads, &mut |dp| add_into(dp, &g[offset..offset + len]));
                    offset += len;
                }
            }
            &Op::SliceRows(a, start) => {
                let n = out.cols();
                acc(a, grads, &mut |da| add_into(&mut da[start * n..start * n + g.len()], g));
            }
            &Op::BroadcastRows(a) => {
                let n = out.cols();
                acc(a, grads, &mut |da| {
                    for chunk in g.chunks(n) {
                        add_into(da, chunk);
                    }
                });
            }
            Op::LayerNorm(a, inv_std) => {
                let a = *a;
                let n = out.cols();
                let y = out.data();
                acc(a, grads, &mut |da| {
                    for (r, is) in inv_std.iter().enumerate() {
                        let yr = &y[r * n..(r + 1) * n];
                        let gr = &g[r * n..(r + 1) * n];
                        let mean_g = gr.iter().sum::<f64>() / n as f64;
                        let mean_gy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                        for j in 0..n {
                            da[r * n + j] += is * (gr[j] - mean_g - yr[j] * mean_gy);
                        }
                    }
                });
            }
        }
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
