//! Reverse-mode differentiation over a per-example operation tape.
//!
//! A [`Graph`] borrows a [`ParamStore`] read-only and records every operation
//! as a node, in evaluation order. [`Graph::backward`] walks the tape in
//! reverse and accumulates parameter gradients (`+=`) into a [`Gradients`]
//! buffer owned by the caller. Graphs are cheap to build and are dropped after
//! each example, so a parameter store can be shared by many graphs at once.

use serde::{Deserialize, Serialize};

use super::tensor::{self, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
}

/// Owned learnable tensors, addressed by [`ParamId`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.params.push(Parameter {
            name: name.into(),
            value,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

/// Per-parameter gradient buffers, shaped like the store they were made from.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    bufs: Vec<Tensor>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            bufs: store
                .params
                .iter()
                .map(|p| Tensor::zeros(p.value.shape()))
                .collect(),
        }
    }

    pub fn zero(&mut self) {
        self.bufs.iter_mut().for_each(|b| b.fill(0.0));
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.bufs[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.bufs[id.0]
    }

    pub fn len(&self) -> usize {
        self.bufs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bufs.is_empty()
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.bufs.iter_mut().zip(&other.bufs) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for b in &mut self.bufs {
            b.data_mut().iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.bufs.iter().map(Tensor::norm_sq).sum::<f64>().sqrt()
    }

    /// Rescales so the global L2 norm is at most `max_norm`. Returns the norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }

    pub fn all_finite(&self) -> bool {
        self.bufs.iter().all(Tensor::all_finite)
    }

    pub fn is_all_zero(&self) -> bool {
        self.bufs.iter().all(|b| b.data().iter().all(|&x| x == 0.0))
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Sum(Var),
    Mean(Vec<Var>),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Softmax(Var),
    LogSoftmax(Var),
    Pick(Var, usize),
    EmbedMean { table: Var, ids: Vec<usize> },
    WeightedSum { weights: Var, items: Vec<Var> },
}

#[derive(Debug)]
struct Node {
    op: Op,
    // `None` for parameters, whose value lives in the borrowed store.
    value: Option<Tensor>,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.params.get(*id),
            (None, _) => unreachable!("non-parameter node without a value"),
        }
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node {
            op,
            value: Some(value),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(Op::Input, value)
    }

    pub fn constant_vector(&mut self, data: Vec<f64>) -> Var {
        self.input(Tensor::vector(data))
    }

    /// Node for a stored parameter. Each parameter maps to one node per graph.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), out))
    }

    fn broadcast_check(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a), self.value(b));
        if sa.shape() == sb.shape() || sb.is_scalar() {
            Ok(())
        } else {
            Err(Error::shape(op, sa.shape(), sb.shape()))
        }
    }

    /// Elementwise `a + b`; `b` may also be a scalar.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_check("add", a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = if tb.is_scalar() && !ta.is_scalar() {
            let s = tb.item();
            ta.data().iter().map(|x| x + s).collect()
        } else {
            ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect()
        };
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(Op::Add(a, b), out))
    }

    /// Elementwise `a * b`; `b` may also be a scalar.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_check("mul", a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = if tb.is_scalar() && !ta.is_scalar() {
            let s = tb.item();
            ta.data().iter().map(|x| x * s).collect()
        } else {
            ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect()
        };
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(Op::Mul(a, b), out))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let ta = self.value(a);
        let out = Tensor::new(
            ta.shape().to_vec(),
            ta.data().iter().map(|x| x * factor).collect(),
        )
        .expect("same shape");
        self.push(Op::Scale(a, factor), out)
    }

    fn map_unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let ta = self.value(a);
        let out = Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|&x| f(x)).collect())
            .expect("same shape");
        self.push(op, out)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map_unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map_unary(a, Op::Sigmoid(a), tensor::sigmoid)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(s))
    }

    /// Elementwise mean of same-shape tensors.
    pub fn mean(&mut self, items: &[Var]) -> Result<Var> {
        let first = *items
            .first()
            .ok_or_else(|| Error::Domain("mean of zero tensors".into()))?;
        let shape = self.value(first).shape().to_vec();
        let mut acc = vec![0.0; self.value(first).len()];
        for &v in items {
            let t = self.value(v);
            if t.shape() != shape.as_slice() {
                return Err(Error::shape("mean", &shape, t.shape()));
            }
            for (a, x) in acc.iter_mut().zip(t.data()) {
                *a += x;
            }
        }
        let n = items.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        let out = Tensor::new(shape, acc)?;
        Ok(self.push(Op::Mean(items.to_vec()), out))
    }

    /// Concatenation of vectors.
    pub fn concat(&mut self, items: &[Var]) -> Result<Var> {
        if items.is_empty() {
            return Err(Error::Domain("concat of zero tensors".into()));
        }
        let mut data = Vec::new();
        for &v in items {
            let t = self.value(v);
            if t.shape().len() != 1 {
                return Err(Error::shape("concat", t.shape(), &[t.len()]));
            }
            data.extend_from_slice(t.data());
        }
        Ok(self.push(Op::Concat(items.to_vec()), Tensor::vector(data)))
    }

    /// Contiguous sub-vector `a[start..start+len]`.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        if t.shape().len() != 1 || len == 0 || start + len > t.len() {
            return Err(Error::shape("slice", t.shape(), &[start, len]));
        }
        let out = Tensor::vector(t.data()[start..start + len].to_vec());
        Ok(self.push(Op::Slice(a, start), out))
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.shape().len() != 1 {
            return Err(Error::shape("softmax", t.shape(), &[t.len()]));
        }
        let out = Tensor::vector(tensor::softmax(t.data())?);
        Ok(self.push(Op::Softmax(a), out))
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.shape().len() != 1 {
            return Err(Error::shape("log_softmax", t.shape(), &[t.len()]));
        }
        let out = Tensor::vector(tensor::log_softmax(t.data()));
        Ok(self.push(Op::LogSoftmax(a), out))
    }

    /// Scalar element `a[index]` of a vector.
    pub fn pick(&mut self, a: Var, index: usize) -> Result<Var> {
        let t = self.value(a);
        if index >= t.len() {
            return Err(Error::contract(format!(
                "index {index} out of range for length {}",
                t.len()
            )));
        }
        let v = t.data()[index];
        Ok(self.push(Op::Pick(a, index), Tensor::scalar(v)))
    }

    /// Mean of the rows `ids` of a `[rows, dim]` table.
    pub fn embed_mean(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if ids.is_empty() {
            return Err(Error::contract("embedding mean over zero tokens"));
        }
        if t.shape().len() != 2 {
            return Err(Error::shape("embed_mean", t.shape(), &[ids.len()]));
        }
        let dim = t.cols();
        let mut acc = vec![0.0; dim];
        for &id in ids {
            if id >= t.rows() {
                return Err(Error::contract(format!(
                    "token id {id} outside embedding table of {} rows",
                    t.rows()
                )));
            }
            for (a, x) in acc.iter_mut().zip(t.row(id)) {
                *a += x;
            }
        }
        let n = ids.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        Ok(self.push(
            Op::EmbedMean {
                table,
                ids: ids.to_vec(),
            },
            Tensor::vector(acc),
        ))
    }

    /// `Σ_j weights[j] · items[j]` over same-shape vectors.
    pub fn weighted_sum(&mut self, weights: Var, items: &[Var]) -> Result<Var> {
        let w = self.value(weights);
        if w.len() != items.len() || items.is_empty() {
            return Err(Error::shape("weighted_sum", w.shape(), &[items.len()]));
        }
        let w = w.data().to_vec();
        let shape = self.value(items[0]).shape().to_vec();
        let mut acc = vec![0.0; self.value(items[0]).len()];
        for (&wj, &v) in w.iter().zip(items) {
            let t = self.value(v);
            if t.shape() != shape.as_slice() {
                return Err(Error::shape("weighted_sum", &shape, t.shape()));
            }
            for (a, x) in acc.iter_mut().zip(t.data()) {
                *a += wj * x;
            }
        }
        let out = Tensor::new(shape, acc)?;
        Ok(self.push(
            Op::WeightedSum {
                weights,
                items: items.to_vec(),
            },
            out,
        ))
    }

    /// Accumulates `d root / d param` into `grads` for every parameter reachable from `root`.
    pub fn backward(&self, root: Var, grads: &mut Gradients) -> Result<()> {
        if !self.value(root).is_scalar() {
            return Err(Error::contract(format!(
                "backward requires a scalar root, got shape {:?}",
                self.value(root).shape()
            )));
        }
        if grads.len() != self.params.len() {
            return Err(Error::contract(
                "gradient buffer does not match the parameter store",
            ));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        adj[root.0] = Some(vec![1.0]);

        for idx in (0..=root.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            let out = self.value(Var(idx));
            match &node.op {
                Op::Input => {}
                Op::Param(id) => {
                    for (d, x) in grads.bufs[id.0].data_mut().iter_mut().zip(&g) {
                        *d += x;
                    }
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k) = (ta.rows(), ta.cols());
                    if tb.shape().len() == 1 {
                        let x = tb.data();
                        accumulate(&mut adj, *a, m * k, |da| {
                            for i in 0..m {
                                let gi = g[i];
                                if gi == 0.0 {
                                    continue;
                                }
                                for (d, xv) in da[i * k..(i + 1) * k].iter_mut().zip(x) {
                                    *d += gi * xv;
                                }
                            }
                        });
                        let w = ta.data();
                        accumulate(&mut adj, *b, k, |db| {
                            for i in 0..m {
                                let gi = g[i];
                                if gi == 0.0 {
                                    continue;
                                }
                                for (d, wv) in db.iter_mut().zip(&w[i * k..(i + 1) * k]) {
                                    *d += gi * wv;
                                }
                            }
                        });
                    } else {
                        let n = tb.cols();
                        // da += g · bᵀ
                        accumulate(&mut adj, *a, m * k, |da| {
                            for i in 0..m {
                                for p in 0..k {
                                    let b_row = &tb.data()[p * n..(p + 1) * n];
                                    da[i * k + p] += tensor::dot(&g[i * n..(i + 1) * n], b_row);
                                }
                            }
                        });
                        // db += aᵀ · g
                        accumulate(&mut adj, *b, k * n, |db| {
                            for i in 0..m {
                                for p in 0..k {
                                    let aip = ta.data()[i * k + p];
                                    for j in 0..n {
                                        db[p * n + j] += aip * g[i * n + j];
                                    }
                                }
                            }
                        });
                    }
                }
                Op::Add(a, b) => {
                    let n = g.len();
                    accumulate(&mut adj, *a, n, |da| add_into(da, &g));
                    if self.value(*b).len() == n {
                        accumulate(&mut adj, *b, n, |db| add_into(db, &g));
                    } else {
                        let s: f64 = g.iter().sum();
                        accumulate(&mut adj, *b, 1, |db| db[0] += s);
                    }
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let n = g.len();
                    if tb.len() == n {
                        accumulate(&mut adj, *a, n, |da| {
                            for ((d, gi), bi) in da.iter_mut().zip(&g).zip(tb.data()) {
                                *d += gi * bi;
                            }
                        });
                        accumulate(&mut adj, *b, n, |db| {
                            for ((d, gi), ai) in db.iter_mut().zip(&g).zip(ta.data()) {
                                *d += gi * ai;
                            }
                        });
                    } else {
                        let s = tb.item();
                        accumulate(&mut adj, *a, n, |da| {
                            for (d, gi) in da.iter_mut().zip(&g) {
                                *d += gi * s;
                            }
                        });
                        let ds = tensor::dot(&g, ta.data());
                        accumulate(&mut adj, *b, 1, |db| db[0] += ds);
                    }
                }
                Op::Scale(a, f) => {
                    accumulate(&mut adj, *a, g.len(), |da| {
                        for (d, gi) in da.iter_mut().zip(&g) {
                            *d += gi * f;
                        }
                    });
                }
                Op::Tanh(a) => {
                    accumulate(&mut adj, *a, g.len(), |da| {
                        for ((d, gi), y) in da.iter_mut().zip(&g).zip(out.data()) {
                            *d += gi * (1.0 - y * y);
                        }
                    });
                }
                Op::Sigmoid(a) => {
                    accumulate(&mut adj, *a, g.len(), |da| {
                        for ((d, gi), y) in da.iter_mut().zip(&g).zip(out.data()) {
                            *d += gi * y * (1.0 - y);
                        }
                    });
                }
                Op::Sum(a) => {
                    let n = self.value(*a).len();
                    accumulate(&mut adj, *a, n, |da| da.iter_mut().for_each(|d| *d += g[0]));
                }
                Op::Mean(items) => {
                    let inv = 1.0 / items.len() as f64;
                    for &v in items {
                        accumulate(&mut adj, v, g.len(), |dv| {
                            for (d, gi) in dv.iter_mut().zip(&g) {
                                *d += gi * inv;
                            }
                        });
                    }
                }
                Op::Concat(items) => {
                    let mut offset = 0;
                    for &v in items {
                        let n = self.value(v).len();
                        accumulate(&mut adj, v, n, |dv| add_into(dv, &g[offset..offset + n]));
                        offset += n;
                    }
                }
                Op::Slice(a, start) => {
                    let n = self.value(*a).len();
                    let start = *start;
                    accumulate(&mut adj, *a, n, |da| {
                        add_into(&mut da[start..start + g.len()], &g)
                    });
                }
                Op::Softmax(a) => {
                    let y = out.data();
                    let gy = tensor::dot(&g, y);
                    accumulate(&mut adj, *a, g.len(), |da| {
                        for ((d, gi), yi) in da.iter_mut().zip(&g).zip(y) {
                            *d += yi * (gi - gy);
                        }
                    });
                }
                Op::LogSoftmax(a) => {
                    let total: f64 = g.iter().sum();
                    accumulate(&mut adj, *a, g.len(), |da| {
                        for ((d, gi), yi) in da.iter_mut().zip(&g).zip(out.data()) {
                            *d += gi - yi.exp() * total;
                        }
                    });
                }
                Op::Pick(a, index) => {
                    let n = self.value(*a).len();
                    accumulate(&mut adj, *a, n, |da| da[*index] += g[0]);
                }
                Op::EmbedMean { table, ids } => {
                    let t = self.value(*table);
                    let dim = t.cols();
                    let inv = 1.0 / ids.len() as f64;
                    let scatter = |dt: &mut [f64]| {
                        for &id in ids {
                            for (d, gi) in dt[id * dim..(id + 1) * dim].iter_mut().zip(&g) {
                                *d += gi * inv;
                            }
                        }
                    };
                    // Write straight into the parameter gradient rather than
                    // materialising a dense table-sized adjoint.
                    match self.nodes[table.0].op {
                        Op::Param(id) => scatter(grads.bufs[id.0].data_mut()),
                        _ => accumulate(&mut adj, *table, t.len(), scatter),
                    }
                }
                Op::WeightedSum { weights, items } => {
                    let w = self.value(*weights).data();
                    let dw: Vec<f64> = items
                        .iter()
                        .map(|&v| tensor::dot(&g, self.value(v).data()))
                        .collect();
                    accumulate(&mut adj, *weights, w.len(), |d| add_into(d, &dw));
                    for (&wj, &v) in w.iter().zip(items) {
                        accumulate(&mut adj, v, g.len(), |dv| {
                            for (d, gi) in dv.iter_mut().zip(&g) {
                                *d += wj * gi;
                            }
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

fn accumulate(adj: &mut [Option<Vec<f64>>], v: Var, len: usize, f: impl FnOnce(&mut [f64])) {
    let buf = adj[v.0].get_or_insert_with(|| vec![0.0; len]);
    f(buf);
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
