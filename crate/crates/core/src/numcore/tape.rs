//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] is rebuilt for every forward pass. Each operation appends a
//! node holding its value and the operand handles needed by its backward
//! rule, so nodes are always in topological order. [`Tape::backward`] walks
//! the nodes in reverse and accumulates gradients for every node that depends
//! on a `requires_grad` leaf.

use std::rc::Rc;

use rand::Rng;

use super::{NumError, Tensor};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Directed edge list used by the sparse attention operators.
///
/// Edge `e` runs from `src[e]` to `dst[e]`; attention for node `i` is
/// normalized over all edges with `dst == i`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeIndex {
    src: Vec<usize>,
    dst: Vec<usize>,
    weight: Vec<f64>,
    num_nodes: usize,
    incoming: Vec<Vec<usize>>,
}

impl EdgeIndex {
    pub fn new(
        src: Vec<usize>,
        dst: Vec<usize>,
        weight: Vec<f64>,
        num_nodes: usize,
    ) -> Result<Self, NumError> {
        if src.len() != dst.len() || src.len() != weight.len() {
            return Err(NumError::Shape(format!(
                "edge arrays disagree: {} src, {} dst, {} weights",
                src.len(),
                dst.len(),
                weight.len()
            )));
        }
        let mut incoming = vec![Vec::new(); num_nodes];
        for (e, (&s, &d)) in src.iter().zip(&dst).enumerate() {
            if s >= num_nodes || d >= num_nodes {
                return Err(NumError::Shape(format!(
                    "edge {e} ({s} -> {d}) out of range for {num_nodes} nodes"
                )));
            }
            incoming[d].push(e);
        }
        Ok(Self {
            src,
            dst,
            weight,
            num_nodes,
            incoming,
        })
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn src(&self) -> &[usize] {
        &self.src
    }

    pub fn dst(&self) -> &[usize] {
        &self.dst
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    /// Edge ids whose destination is `node`.
    pub fn incoming(&self, node: usize) -> &[usize] {
        &self.incoming[node]
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Gelu(Var),
    Sigmoid(Var),
    Exp(Var),
    Ln(Var),
    Sqrt(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    Dropout(Var, Rc<Vec<f64>>),
    SumAll(Var),
    MeanAll(Var),
    MeanRows(Var),
    MeanCols(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Rc<Vec<usize>>),
    MaskedSoftmax(Var, Rc<Vec<bool>>),
    SegmentSoftmax(Var, Rc<EdgeIndex>),
    EdgeScores {
        q: Var,
        k: Var,
        edge_proj: Var,
        edges: Rc<EdgeIndex>,
        heads: usize,
        scale: f64,
    },
    EdgeAggregate {
        alpha: Var,
        v: Var,
        edge_proj: Var,
        edges: Rc<EdgeIndex>,
        heads: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Operation record for one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient of `var`, or zeros of `like`'s shape when `var` had no path to the loss.
    pub fn get_or_zeros(&self, var: Var, like: &Tensor) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

fn broadcast_dims(a: (usize, usize), b: (usize, usize)) -> Result<(usize, usize), NumError> {
    let dim = |x: usize, y: usize| -> Option<usize> {
        if x == y || y == 1 {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else {
            None
        }
    };
    match (dim(a.0, b.0), dim(a.1, b.1)) {
        (Some(r), Some(c)) => Ok((r, c)),
        _ => Err(NumError::Shape(format!(
            "cannot broadcast [{}, {}] with [{}, {}]",
            a.0, a.1, b.0, b.1
        ))),
    }
}

#[inline]
fn bidx(dims: (usize, usize), r: usize, c: usize) -> usize {
    let rr = if dims.0 == 1 { 0 } else { r };
    let cc = if dims.1 == 1 { 0 } else { c };
    rr * dims.1 + cc
}

/// Sums a broadcast gradient back down to `dims`.
fn reduce_to(grad: &Tensor, dims: (usize, usize)) -> Tensor {
    let (r, c) = (grad.rows(), grad.cols());
    if (r, c) == dims {
        return grad.clone();
    }
    let mut out = vec![0.0; dims.0 * dims.1];
    for i in 0..r {
        for j in 0..c {
            out[bidx(dims, i, j)] += grad.data()[i * c + j];
        }
    }
    Tensor::matrix(dims.0, dims.1, out).expect("reduced shape")
}

fn matmul_raw(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + statrs::function::erf::erf(x / std::f64::consts::SQRT_2))
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
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

    /// Records a differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
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

    fn dims(&self, var: Var) -> Result<(usize, usize), NumError> {
        self.value(var).dims2()
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(x).map(f);
        let rg = self.rg(&[x]);
        self.push(value, op, rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (n, k) = self.dims(a)?;
        let (k2, m) = self.dims(b)?;
        if k != k2 {
            return Err(NumError::Shape(format!("matmul [{n}, {k}] x [{k2}, {m}]")));
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), n, k, m);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::matrix(n, m, out)?, Op::MatMul(a, b), rg))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var, NumError> {
        let da = self.dims(a)?;
        let db = self.dims(b)?;
        let (r, c) = broadcast_dims(da, db)?;
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                out.push(f(va[bidx(da, i, j)], vb[bidx(db, i, j)]));
            }
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::matrix(r, c, out)?, op, rg))
    }

    /// Elementwise `a + b` with row/column broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    /// Elementwise (Hadamard) product with broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.binary(a, b, Op::Div(a, b), |x, y| x / y)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::Scale(x, c), |v| v * c)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::AddScalar(x), |v| v + c)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| v.max(0.0))
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Gelu(x), |v| v * std_normal_cdf(v))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Op::Exp(x), f64::exp)
    }

    pub fn ln(&mut self, x: Var) -> Var {
        self.unary(x, Op::Ln(x), f64::ln)
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sqrt(x), f64::sqrt)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, Op::Square(x), |v| v * v)
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, Op::Clamp(x, lo, hi), |v| v.clamp(lo, hi))
    }

    /// Inverted dropout. In evaluation mode (or with `p == 0`) this returns `x`
    /// unchanged and records nothing.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        p: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var, NumError> {
        if !(0.0..1.0).contains(&p) {
            return Err(NumError::Contract(format!(
                "dropout probability {p} outside [0, 1)"
            )));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let v = self.value(x);
        let data = v.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let value = Tensor::new(v.shape().to_vec(), data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Dropout(x, Rc::new(mask)), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::SumAll(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::MeanAll(x), rg)
    }

    /// Column means: `[r, c] -> [1, c]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var, NumError> {
        let (r, c) = self.dims(x)?;
        let v = self.value(x).data();
        let mut out = vec![0.0; c];
        for i in 0..r {
            for j in 0..c {
                out[j] += v[i * c + j];
            }
        }
        out.iter_mut().for_each(|o| *o /= r as f64);
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::row(out), Op::MeanRows(x), rg))
    }

    /// Row means: `[r, c] -> [r, 1]`.
    pub fn mean_cols(&mut self, x: Var) -> Result<Var, NumError> {
        let (r, c) = self.dims(x)?;
        let v = self.value(x).data();
        let out = (0..r)
            .map(|i| v[i * c..(i + 1) * c].iter().sum::<f64>() / c as f64)
            .collect();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::column(out), Op::MeanCols(x), rg))
    }

    /// Stacks matrices vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumError> {
        let first = parts
            .first()
            .ok_or_else(|| NumError::Shape("concat of nothing".into()))?;
        let cols = self.dims(*first)?.1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.dims(p)?;
            if c != cols {
                return Err(NumError::Shape(format!(
                    "concat_rows: {c} columns vs {cols}"
                )));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        let rg = self.rg(parts);
        Ok(self.push(
            Tensor::matrix(rows, cols, data)?,
            Op::ConcatRows(parts.to_vec()),
            rg,
        ))
    }

    /// Joins matrices side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumError> {
        let first = parts
            .first()
            .ok_or_else(|| NumError::Shape("concat of nothing".into()))?;
        let rows = self.dims(*first)?.0;
        let mut total = 0;
        for &p in parts {
            let (r, c) = self.dims(p)?;
            if r != rows {
                return Err(NumError::Shape(format!("concat_cols: {r} rows vs {rows}")));
            }
            total += c;
        }
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(i));
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(
            Tensor::matrix(rows, total, data)?,
            Op::ConcatCols(parts.to_vec()),
            rg,
        ))
    }

    /// Selects rows by index (repeats allowed).
    pub fn gather_rows(&mut self, x: Var, idx: Rc<Vec<usize>>) -> Result<Var, NumError> {
        let (r, c) = self.dims(x)?;
        if idx.is_empty() {
            return Err(NumError::Shape("gather_rows with no indices".into()));
        }
        let v = self.value(x);
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx.iter() {
            if i >= r {
                return Err(NumError::Shape(format!(
                    "row {i} out of range for {r} rows"
                )));
            }
            data.extend_from_slice(v.row_slice(i));
        }
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::matrix(idx.len(), c, data)?,
            Op::GatherRows(x, idx),
            rg,
        ))
    }

    /// Row-wise softmax restricted to entries where `mask` is true.
    /// Entries outside the mask are 0; a fully masked row is all zeros.
    pub fn masked_softmax(&mut self, x: Var, mask: Rc<Vec<bool>>) -> Result<Var, NumError> {
        let (r, c) = self.dims(x)?;
        if mask.len() != r * c {
            return Err(NumError::Shape(format!(
                "mask has {} entries for a [{r}, {c}] input",
                mask.len()
            )));
        }
        let v = self.value(x).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = i * c..(i + 1) * c;
            let max = row
                .clone()
                .filter(|&k| mask[k])
                .map(|k| v[k])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let mut z = 0.0;
            for k in row.clone() {
                if mask[k] {
                    out[k] = (v[k] - max).exp();
                    z += out[k];
                }
            }
            for k in row {
                out[k] /= z;
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::matrix(r, c, out)?, Op::MaskedSoftmax(x, mask), rg))
    }

    /// Softmax of `[E, H]` edge logits over each destination node's incoming
    /// edges, independently per head column.
    pub fn segment_softmax(&mut self, x: Var, edges: Rc<EdgeIndex>) -> Result<Var, NumError> {
        let (e, h) = self.dims(x)?;
        if e != edges.len() {
            return Err(NumError::Shape(format!(
                "{e} logits for {} edges",
                edges.len()
            )));
        }
        let v = self.value(x).data();
        let mut out = vec![0.0; e * h];
        for node in 0..edges.num_nodes() {
            let inc = edges.incoming(node);
            if inc.is_empty() {
                continue;
            }
            for head in 0..h {
                let max = inc
                    .iter()
                    .map(|&k| v[k * h + head])
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for &k in inc {
                    let ex = (v[k * h + head] - max).exp();
                    out[k * h + head] = ex;
                    z += ex;
                }
                for &k in inc {
                    out[k * h + head] /= z;
                }
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::matrix(e, h, out)?, Op::SegmentSoftmax(x, edges), rg))
    }

    /// Per-edge, per-head attention logits with an additive edge term on keys:
    /// `scale * <q[dst], k[src] + w * edge_proj>` restricted to each head's
    /// slice of the feature axis. Returns `[E, heads]`.
    pub fn edge_scores(
        &mut self,
        q: Var,
        k: Var,
        edge_proj: Var,
        edges: Rc<EdgeIndex>,
        heads: usize,
        scale: f64,
    ) -> Result<Var, NumError> {
        let (n, d) = self.dims(q)?;
        let dk = head_width(d, heads)?;
        if self.dims(k)? != (n, d) || self.dims(edge_proj)? != (1, d) || n != edges.num_nodes() {
            return Err(NumError::Shape(
                "edge_scores operand shapes disagree".into(),
            ));
        }
        let (qv, kv, we) = (
            self.value(q).data(),
            self.value(k).data(),
            self.value(edge_proj).data(),
        );
        if edges.is_empty() {
            return Err(NumError::Shape("edge_scores on an empty edge set".into()));
        }
        let mut out = vec![0.0; edges.len() * heads];
        for e in 0..edges.len() {
            let (i, j, w) = (edges.dst[e], edges.src[e], edges.weight[e]);
            for h in 0..heads {
                let mut acc = 0.0;
                for t in h * dk..(h + 1) * dk {
                    acc += qv[i * d + t] * (kv[j * d + t] + w * we[t]);
                }
                out[e * heads + h] = scale * acc;
            }
        }
        let rg = self.rg(&[q, k, edge_proj]);
        Ok(self.push(
            Tensor::matrix(edges.len(), heads, out)?,
            Op::EdgeScores {
                q,
                k,
                edge_proj,
                edges,
                heads,
                scale,
            },
            rg,
        ))
    }

    /// Attention-weighted sum of edge-augmented values:
    /// `out[i] = sum_{e: dst=i} alpha[e, head] * (v[src] + w * edge_proj)`.
    /// Nodes without incoming edges get zeros.
    pub fn edge_aggregate(
        &mut self,
        alpha: Var,
        v: Var,
        edge_proj: Var,
        edges: Rc<EdgeIndex>,
        heads: usize,
    ) -> Result<Var, NumError> {
        let (n, d) = self.dims(v)?;
        let dk = head_width(d, heads)?;
        if self.dims(alpha)? != (edges.len(), heads)
            || self.dims(edge_proj)? != (1, d)
            || n != edges.num_nodes()
        {
            return Err(NumError::Shape(
                "edge_aggregate operand shapes disagree".into(),
            ));
        }
        let (av, vv, we) = (
            self.value(alpha).data(),
            self.value(v).data(),
            self.value(edge_proj).data(),
        );
        let mut out = vec![0.0; n * d];
        for e in 0..edges.len() {
            let (i, j, w) = (edges.dst[e], edges.src[e], edges.weight[e]);
            for h in 0..heads {
                let a = av[e * heads + h];
                for t in h * dk..(h + 1) * dk {
                    out[i * d + t] += a * (vv[j * d + t] + w * we[t]);
                }
            }
        }
        let rg = self.rg(&[alpha, v, edge_proj]);
        Ok(self.push(
            Tensor::matrix(n, d, out)?,
            Op::EdgeAggregate {
                alpha,
                v,
                edge_proj,
                edges,
                heads,
            },
            rg,
        ))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumError> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(NumError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::new(lv.shape().to_vec(), vec![1.0])?);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], var: Var, g: Tensor) {
        if !self.nodes[var.0].requires_grad {
            return;
        }
        match &mut grads[var.0] {
            Some(acc) => {
                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    fn like(&self, var: Var, data: Vec<f64>) -> Tensor {
        Tensor::new(self.value(var).shape().to_vec(), data).expect("shape of operand")
    }

    fn propagate(
        &self,
        idx: usize,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
    ) -> Result<(), NumError> {
        let node = &self.nodes[idx];
        let out = &node.value;
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (n, k) = self.dims(*a)?;
                let m = self.dims(*b)?.1;
                if self.requires_grad(*a) {
                    let bt = transpose_raw(self.value(*b).data(), k, m);
                    let ga = matmul_raw(gd, &bt, n, m, k);
                    self.accumulate(grads, *a, Tensor::matrix(n, k, ga)?);
                }
                if self.requires_grad(*b) {
                    let at = transpose_raw(self.value(*a).data(), n, k);
                    let gb = matmul_raw(&at, gd, k, n, m);
                    self.accumulate(grads, *b, Tensor::matrix(k, m, gb)?);
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => {
                let (da, db) = (self.dims(*a)?, self.dims(*b)?);
                let (r, c) = (out.rows(), out.cols());
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let mut ga = vec![0.0; r * c];
                let mut gb = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        let o = i * c + j;
                        let (x, y) = (va[bidx(da, i, j)], vb[bidx(db, i, j)]);
                        let (pa, pb) = match node.op {
                            Op::Add(..) => (1.0, 1.0),
                            Op::Sub(..) => (1.0, -1.0),
                            Op::Mul(..) => (y, x),
                            _ => (1.0 / y, -x / (y * y)),
                        };
                        ga[o] = gd[o] * pa;
                        gb[o] = gd[o] * pb;
                    }
                }
                let ga = Tensor::matrix(r, c, ga)?;
                let gb = Tensor::matrix(r, c, gb)?;
                self.accumulate(grads, *a, reduce_to(&ga, da));
                self.accumulate(grads, *b, reduce_to(&gb, db));
            }
            Op::Scale(x, c) => {
                let gx = gd.iter().map(|v| v * c).collect();
                self.accumulate(grads, *x, self.like(*x, gx));
            }
            Op::AddScalar(x) => self.accumulate(grads, *x, g.clone()),
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                let gx = gd
                    .iter()
                    .zip(xv)
                    .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                    .collect();
                self.accumulate(grads, *x, self.like(*x, gx));
            }
            Op::Gelu(x) => {
                let xv = self.value(*x).data();
                let gx = gd
                    .iter()
                    .zip(xv)
                    .map(|(g, &v)| g * (std_normal_cdf(v) + v * std_normal_pdf(v)))
                    .collect();
                self.accumulate(grads, *x, self.like(*x, gx));
            }
            Op::Sigmoid(x) => {
                let gx = gd
                    .iter()
                    .zip(out.data())
                    .map(|(g, &y)| g * y * (1.0 - y))
                    .collect();
                self.accumulate(grads, *x, self.like(*x, gx));
            }
            Op::Exp(x) => {
                let gx = gd.iter().zip(out.data()).map(|(g, &y)| g * y).collect();
                self.accumulate(grads, *x, self.like(*x, gx));
            }
            Op::Ln(x) => {
                let xv = self.value(*x).data();
                let gx = gd.iter().zip(xv).map(|(g, &v)| g / v).collect();
                self.accumulate(grads, *x, self.like(*x, gx));
            }
            Op::Sqrt(x) => {
                let gx = gd
                    .iter()
                    .zip(out.data())
                    .map(|(g, &y)| g / (2.0 * y))
                    .collect();
                self.accumulate(grads, *x, self.like(*x, gx));
            }
            Op::Square(x) => {
                let xv = self.value(*x).data();
                let gx = gd.iter().zip(xv).map(|(g, &v)| 2.0 * v * g).collect();
                self.accumulate(grads, *x, self.like(*x, gx));
            }
            Op::Clamp(x, lo, hi) => {
                let xv = self.value(*x).data();
                let gx = gd
                    .iter()
                    .zip(xv)
                    .map(|(g, &v)| if v >= *lo && v <= *hi { *g } else { 0.0 })
                    .collect();
                self.accumulate(grads, *x, self.like(*x, gx));
            }
            Op::Dropout(x, mask) => {
                let gx = gd.iter().zip(mask.iter()).map(|(g, m)| g * m).collect();
                self.accumulate(grads, *x, self.like(*x, gx));
            }
            Op::SumAll(x) => {
                let n = self.value(*x).len();
                self.accumulate(grads, *x, self.like(*x, vec![gd[0]; n]));
            }
            Op::MeanAll(x) => {
                let n = self.value(*x).len();
                self.accumulate(grads, *x, self.like(*x, vec![gd[0] / n as f64; n]));
            }
            Op::MeanRows(x) => {
                let (r, c) = self.dims(*x)?;
                let mut gx = Vec::with_capacity(r * c);
                for _ in 0..r {
                    gx.extend(gd.iter().map(|g| g / r as f64));
                }
                self.accumulate(grads, *x, self.like(*x, gx));
            }
            Op::MeanCols(x) => {
                let (r, c) = self.dims(*x)?;
                let mut gx = Vec::with_capacity(r * c);
                for gi in gd.iter().take(r) {
                    gx.extend(std::iter::repeat_n(gi / c as f64, c));
                }
                self.accumulate(grads, *x, self.like(*x, gx));
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    let gp = gd[offset..offset + n].to_vec();
                    offset += n;
                    self.accumulate(grads, p, self.like(p, gp));
                }
            }
            Op::ConcatCols(parts) => {
                let (rows, total) = (out.rows(), out.cols());
                let mut col = 0;
                for &p in parts {
                    let c = self.dims(p)?.1;
                    if self.requires_grad(p) {
                        let mut gp = Vec::with_capacity(rows * c);
                        for i in 0..rows {
                            gp.extend_from_slice(&gd[i * total + col..i * total + col + c]);
                        }
                        self.accumulate(grads, p, self.like(p, gp));
                    }
                    col += c;
                }
            }
            Op::GatherRows(x, ids) => {
                let (r, c) = self.dims(*x)?;
                let mut gx = vec![0.0; r * c];
                for (k, &i) in ids.iter().enumerate() {
                    for j in 0..c {
                        gx[i * c + j] += gd[k * c + j];
                    }
                }
                self.accumulate(grads, *x, self.like(*x, gx));
            }
            Op::MaskedSoftmax(x, mask) => {
                let (r, c) = self.dims(*x)?;
                let y = out.data();
                let mut gx = vec![0.0; r * c];
                for i in 0..r {
                    let row = i * c..(i + 1) * c;
                    let dot: f64 = row.clone().filter(|&k| mask[k]).map(|k| y[k] * gd[k]).sum();
                    for k in row {
                        if mask[k] {
                            gx[k] = y[k] * (gd[k] - dot);
                        }
                    }
                }
                self.accumulate(grads, *x, self.like(*x, gx));
            }
            Op::SegmentSoftmax(x, edges) => {
                let (e, h) = self.dims(*x)?;
                let y = out.data();
                let mut gx = vec![0.0; e * h];
                for node in 0..edges.num_nodes() {
                    let inc = edges.incoming(node);
                    for head in 0..h {
                        let dot: f64 = inc
                            .iter()
                            .map(|&k| y[k * h + head] * gd[k * h + head])
                            .sum();
                        for &k in inc {
                            gx[k * h + head] = y[k * h + head] * (gd[k * h + head] - dot);
                        }
                    }
                }
                self.accumulate(grads, *x, self.like(*x, gx));
            }
            Op::EdgeScores {
                q,
                k,
                edge_proj,
                edges,
                heads,
                scale,
            } => {
                let (n, d) = self.dims(*q)?;
                let dk = d / heads;
                let (qv, kv, we) = (
                    self.value(*q).data(),
                    self.value(*k).data(),
                    self.value(*edge_proj).data(),
                );
                let mut gq = vec![0.0; n * d];
                let mut gk = vec![0.0; n * d];
                let mut gwe = vec![0.0; d];
                for e in 0..edges.len() {
                    let (i, j, w) = (edges.dst[e], edges.src[e], edges.weight[e]);
                    for h in 0..*heads {
                        let ge = gd[e * heads + h] * scale;
                        if ge == 0.0 {
                            continue;
                        }
                        for t in h * dk..(h + 1) * dk {
                            let qi = qv[i * d + t];
                            gq[i * d + t] += ge * (kv[j * d + t] + w * we[t]);
                            gk[j * d + t] += ge * qi;
                            gwe[t] += ge * qi * w;
                        }
                    }
                }
                self.accumulate(grads, *q, Tensor::matrix(n, d, gq)?);
                self.accumulate(grads, *k, Tensor::matrix(n, d, gk)?);
                self.accumulate(grads, *edge_proj, Tensor::row(gwe));
            }
            Op::EdgeAggregate {
                alpha,
                v,
                edge_proj,
                edges,
                heads,
            } => {
                let (n, d) = self.dims(*v)?;
                let dk = d / heads;
                let (av, vv, we) = (
                    self.value(*alpha).data(),
                    self.value(*v).data(),
                    self.value(*edge_proj).data(),
                );
                let mut galpha = vec![0.0; edges.len() * heads];
                let mut gv = vec![0.0; n * d];
                let mut gwe = vec![0.0; d];
                for e in 0..edges.len() {
                    let (i, j, w) = (edges.dst[e], edges.src[e], edges.weight[e]);
                    for h in 0..*heads {
                        let a = av[e * heads + h];
                        let mut ga = 0.0;
                        for t in h * dk..(h + 1) * dk {
                            let go = gd[i * d + t];
                            ga += go * (vv[j * d + t] + w * we[t]);
                            gv[j * d + t] += a * go;
                            gwe[t] += a * w * go;
                        }
                        galpha[e * heads + h] = ga;
                    }
                }
                self.accumulate(grads, *alpha, Tensor::matrix(edges.len(), *heads, galpha)?);
                self.accumulate(grads, *v, Tensor::matrix(n, d, gv)?);
                self.accumulate(grads, *edge_proj, Tensor::row(gwe));
            }
        }
        Ok(())
    }
}

fn head_width(d: usize, heads: usize) -> Result<usize, NumError> {
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(NumError::Shape(format!(
            "width {d} not divisible by {heads} heads"
        )));
    }
    Ok(d / heads)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
