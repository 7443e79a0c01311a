//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node holding its output value. `backward` walks the
//! tape once in reverse; nodes that cannot reach a trainable leaf are skipped.

use std::collections::HashMap;

use crate::error::{shape_err, Error, Result};
use crate::numerics::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// The closed set of differentiable operations.
#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    /// `[m,k] x [k,n] -> [m,n]`
    Matmul,
    /// Elementwise; the second operand may broadcast over leading axes.
    Add,
    /// Elementwise; the second operand may broadcast over leading axes.
    Mul,
    Concat { axis: usize },
    Slice { axis: usize, start: usize, len: usize },
    /// Rank-2 transpose.
    Transpose,
    /// Softmax over the last axis.
    Softmax,
    /// Normalization over the last axis, without affine parameters.
    LayerNorm { eps: f64 },
    Relu,
    /// Gathers rows of a `[vocab, d]` table.
    EmbeddingLookup { ids: Vec<usize> },
    /// Mean token cross-entropy over the rows whose target is `Some`.
    CrossEntropy { targets: Vec<Option<usize>> },
    Scale(f64),
    /// Identity forward, zero backward.
    StopGradient,
    /// Sum of all elements into a scalar.
    Sum,
}

impl OpKind {
    fn name(&self) -> &'static str {
        match self {
            OpKind::Matmul => "matmul",
            OpKind::Add => "add",
            OpKind::Mul => "mul",
            OpKind::Concat { .. } => "concat",
            OpKind::Slice { .. } => "slice",
            OpKind::Transpose => "transpose",
            OpKind::Softmax => "softmax",
            OpKind::LayerNorm { .. } => "layer_norm",
            OpKind::Relu => "relu",
            OpKind::EmbeddingLookup { .. } => "embedding_lookup",
            OpKind::CrossEntropy { .. } => "cross_entropy",
            OpKind::Scale(_) => "scale",
            OpKind::StopGradient => "stop_gradient",
            OpKind::Sum => "sum",
        }
    }
}

struct Node {
    op: Option<OpKind>,
    inputs: Vec<Var>,
    value: Tensor,
    needs_grad: bool,
    /// Per-op cache: inverse std for layer norm, probabilities for cross-entropy.
    saved: Vec<f64>,
}

/// A single-use computation tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients of a scalar loss with respect to the trainable leaves of a graph.
#[derive(Debug, Default)]
pub struct Gradients {
    reached: HashMap<usize, Tensor>,
    leaf_shapes: HashMap<usize, Vec<usize>>,
}

impl Gradients {
    /// Gradient for a leaf the loss actually depends on; `None` when no path exists.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.reached.get(&v.0)
    }

    /// Gradient for a trainable leaf, zeros when the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Tensor {
        if let Some(g) = self.reached.get(&v.0) {
            return g.clone();
        }
        match self.leaf_shapes.get(&v.0) {
            Some(shape) => Tensor::zeros(shape),
            None => panic!("node {} is not a trainable leaf", v.0),
        }
    }

    pub fn is_reached(&self, v: Var) -> bool {
        self.reached.contains_key(&v.0)
    }
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

    /// Adds a leaf; it is trainable iff the tensor carries `requires_grad`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let needs_grad = t.requires_grad();
        self.push(None, Vec::new(), t, needs_grad, Vec::new())
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t.with_requires_grad(false))
    }

    pub fn param(&mut self, t: Tensor) -> Var {
        self.leaf(t.with_requires_grad(true))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Input node ids of `v`, in argument order.
    pub fn inputs(&self, v: Var) -> &[Var] {
        &self.nodes[v.0].inputs
    }

    pub fn op(&self, v: Var) -> Option<&OpKind> {
        self.nodes[v.0].op.as_ref()
    }

    fn push(
        &mut self,
        op: Option<OpKind>,
        inputs: Vec<Var>,
        value: Tensor,
        needs_grad: bool,
        saved: Vec<f64>,
    ) -> Var {
        self.nodes.push(Node {
            op,
            inputs,
            value,
            needs_grad,
            saved,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records `op` applied to `inputs` and returns the output node.
    pub fn apply(&mut self, op: OpKind, inputs: &[Var]) -> Result<Var> {
        if self.consumed {
            return Err(Error::StaleGraph);
        }
        let arity_ok = match op {
            OpKind::Matmul | OpKind::Add | OpKind::Mul => inputs.len() == 2,
            OpKind::Concat { .. } => !inputs.is_empty(),
            _ => inputs.len() == 1,
        };
        if !arity_ok {
            return Err(shape_err(op.name(), format!("wrong number of inputs ({})", inputs.len())));
        }
        let vals: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
        let (value, saved) = forward(&op, &vals)?;
        let needs_grad = !matches!(op, OpKind::StopGradient)
            && inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        Ok(self.push(Some(op), inputs.to_vec(), value, needs_grad, saved))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Matmul, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Add, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Mul, &[a, b])
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        if xs.len() == 1 {
            return Ok(xs[0]);
        }
        self.apply(OpKind::Concat { axis }, xs)
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.apply(OpKind::Slice { axis, start, len }, &[x])
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        self.apply(OpKind::Transpose, &[x])
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.apply(OpKind::Softmax, &[x])
    }

    pub fn layer_norm(&mut self, x: Var) -> Result<Var> {
        self.apply(OpKind::LayerNorm { eps: 1e-5 }, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.apply(OpKind::Relu, &[x])
    }

    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        self.apply(OpKind::EmbeddingLookup { ids: ids.to_vec() }, &[table])
    }

    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        self.apply(
            OpKind::CrossEntropy {
                targets: targets.to_vec(),
            },
            &[logits],
        )
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.apply(OpKind::Scale(c), &[x])
    }

    pub fn stop_gradient(&mut self, x: Var) -> Result<Var> {
        self.apply(OpKind::StopGradient, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.apply(OpKind::Sum, &[x])
    }

    /// Reverse pass from a scalar loss. The graph cannot be differentiated twice.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::StaleGraph);
        }
        let loss_shape = self.nodes[loss.0].value.shape().to_vec();
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::NotScalar(loss_shape));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        if self.nodes[loss.0].needs_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            let Some(op) = node.op.as_ref() else { continue };
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let inputs: Vec<(&Tensor, bool)> = node
                .inputs
                .iter()
                .map(|v| (&self.nodes[v.0].value, self.nodes[v.0].needs_grad))
                .collect();
            let input_grads = backward_op(op, &inputs, &node.value, &node.saved, &g);
            for (v, ig) in node.inputs.iter().zip(input_grads) {
                let Some(ig) = ig else { continue };
                match &mut grads[v.0] {
                    Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a += b),
                    slot => *slot = Some(ig),
                }
            }
            grads[id] = Some(g);
        }

        let mut out = Gradients::default();
        for (id, node) in self.nodes.iter().enumerate() {
            if node.op.is_some() || !node.needs_grad {
                continue;
            }
            out.leaf_shapes.insert(id, node.value.shape().to_vec());
            if let Some(Some(g)) = grads.get_mut(id).map(Option::take) {
                out.reached.insert(id, Tensor::new(node.value.shape(), g)?);
            }
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// forward kernels

fn broadcast_ok(a: &[usize], b: &[usize]) -> bool {
    b.len() <= a.len() && a[a.len() - b.len()..] == *b
}

fn outer_inner(shape: &[usize], axis: usize) -> (usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, inner)
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cj, bj) in crow.iter_mut().zip(brow) {
                *cj += aip * bj;
            }
        }
    }
    c
}

fn forward(op: &OpKind, x: &[&Tensor]) -> Result<(Tensor, Vec<f64>)> {
    let name = op.name();
    let out = match op {
        OpKind::Matmul => {
            let (m, k) = x[0].dims2()?;
            let (k2, n) = x[1].dims2()?;
            if k != k2 {
                return Err(shape_err(
                    name,
                    format!("inner dimensions differ: {:?} x {:?}", x[0].shape(), x[1].shape()),
                ));
            }
            Tensor::new(&[m, n], matmul_raw(x[0].data(), x[1].data(), m, k, n))?
        }
        OpKind::Add | OpKind::Mul => {
            let (a, b) = (x[0], x[1]);
            if !broadcast_ok(a.shape(), b.shape()) {
                return Err(shape_err(
                    name,
                    format!("cannot broadcast {:?} onto {:?}", b.shape(), a.shape()),
                ));
            }
            let bl = b.numel();
            let bd = b.data();
            let data = a
                .data()
                .chunks(bl)
                .flat_map(|chunk| {
                    chunk.iter().zip(bd).map(|(p, q)| {
                        if matches!(op, OpKind::Add) {
                            p + q
                        } else {
                            p * q
                        }
                    })
                })
                .collect();
            Tensor::new(a.shape(), data)?
        }
        OpKind::Concat { axis } => {
            let axis = *axis;
            let first = x[0].shape();
            if axis >= first.len() {
                return Err(shape_err(name, format!("axis {axis} out of range for {first:?}")));
            }
            let mut total = 0;
            for t in x {
                let s = t.shape();
                let compatible = s.len() == first.len()
                    && s.iter()
                        .zip(first)
                        .enumerate()
                        .all(|(i, (p, q))| i == axis || p == q);
                if !compatible {
                    return Err(shape_err(
                        name,
                        format!("{s:?} does not match {first:?} off axis {axis}"),
                    ));
                }
                total += s[axis];
            }
            let (outer, inner) = outer_inner(first, axis);
            let mut data = Vec::with_capacity(outer * total * inner);
            for o in 0..outer {
                for t in x {
                    let chunk = t.shape()[axis] * inner;
                    data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
                }
            }
            let mut shape = first.to_vec();
            shape[axis] = total;
            Tensor::new(&shape, data)?
        }
        OpKind::Slice { axis, start, len } => {
            let (axis, start, len) = (*axis, *start, *len);
            let s = x[0].shape();
            if axis >= s.len() || len == 0 || start + len > s[axis] {
                return Err(shape_err(
                    name,
                    format!("range {start}..{} invalid on axis {axis} of {s:?}", start + len),
                ));
            }
            let (outer, inner) = outer_inner(s, axis);
            let src = x[0].data();
            let mut data = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let base = o * s[axis] * inner + start * inner;
                data.extend_from_slice(&src[base..base + len * inner]);
            }
            let mut shape = s.to_vec();
            shape[axis] = len;
            Tensor::new(&shape, data)?
        }
        OpKind::Transpose => {
            let (r, c) = x[0].dims2()?;
            let src = x[0].data();
            let mut data = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    data[j * r + i] = src[i * c + j];
                }
            }
            Tensor::new(&[c, r], data)?
        }
        OpKind::Softmax => {
            let cols = *x[0].shape().last().ok_or(Error::EmptyAxis)?;
            let mut data = x[0].to_vec();
            for row in data.chunks_mut(cols) {
                softmax_in_place(row);
            }
            Tensor::new(x[0].shape(), data)?
        }
        OpKind::LayerNorm { eps } => {
            let cols = *x[0].shape().last().ok_or(Error::EmptyAxis)?;
            let mut data = x[0].to_vec();
            let mut inv_std = Vec::with_capacity(data.len() / cols);
            for row in data.chunks_mut(cols) {
                let mean = row.iter().sum::<f64>() / cols as f64;
                let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
                let is = 1.0 / (var + eps).sqrt();
                row.iter_mut().for_each(|v| *v = (*v - mean) * is);
                inv_std.push(is);
            }
            return Ok((Tensor::new(x[0].shape(), data)?, inv_std));
        }
        OpKind::Relu => x[0].map(|v| v.max(0.0)),
        OpKind::EmbeddingLookup { ids } => {
            let (vocab, d) = x[0].dims2()?;
            if ids.is_empty() {
                return Err(Error::EmptyInput("embedding lookup ids"));
            }
            let table = x[0].data();
            let mut data = Vec::with_capacity(ids.len() * d);
            for &id in ids {
                if id >= vocab {
                    return Err(shape_err(name, format!("id {id} out of range for vocab {vocab}")));
                }
                data.extend_from_slice(&table[id * d..(id + 1) * d]);
            }
            Tensor::new(&[ids.len(), d], data)?
        }
        OpKind::CrossEntropy { targets } => {
            let (rows, vocab) = match x[0].shape() {
                [v] => (1, *v),
                [r, v] => (*r, *v),
                s => return Err(shape_err(name, format!("logits must be rank 1 or 2, got {s:?}"))),
            };
            if targets.len() != rows {
                return Err(shape_err(
                    name,
                    format!("{} targets for {rows} logit rows", targets.len()),
                ));
            }
            let count = targets.iter().flatten().count();
            if count == 0 {
                return Err(Error::EmptyInput("cross-entropy targets"));
            }
            let mut probs = x[0].to_vec();
            let mut loss = 0.0;
            for (row, t) in probs.chunks_mut(vocab).zip(targets) {
                let Some(t) = *t else { continue };
                if t >= vocab {
                    return Err(shape_err(name, format!("target {t} out of range for vocab {vocab}")));
                }
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                loss += lse - row[t];
                softmax_in_place(row);
            }
            return Ok((Tensor::scalar(loss / count as f64), probs));
        }
        OpKind::Scale(c) => {
            let c = *c;
            x[0].map(|v| v * c)
        }
        OpKind::StopGradient => x[0].clone().with_requires_grad(false),
        OpKind::Sum => Tensor::scalar(x[0].data().iter().sum()),
    };
    Ok((out, Vec::new()))
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        z += *v;
    }
    row.iter_mut().for_each(|v| *v /= z);
}

// ---------------------------------------------------------------------------
// backward kernels

/// Vector-Jacobian products for each input; `None` for inputs that need no gradient.
fn backward_op(
    op: &OpKind,
    inputs: &[(&Tensor, bool)],
    out: &Tensor,
    saved: &[f64],
    g: &[f64],
) -> Vec<Option<Vec<f64>>> {
    let need = |i: usize| inputs[i].1;
    match op {
        OpKind::Matmul => {
            let (a, b) = (inputs[0].0, inputs[1].0);
            let (m, k) = a.dims2().expect("matmul lhs");
            let n = b.shape()[1];
            let da = need(0).then(|| {
                // g [m,n] . b^T [n,k]
                let bd = b.data();
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let brow = &bd[p * n..(p + 1) * n];
                        da[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                    }
                }
                da
            });
            let db = need(1).then(|| {
                // a^T [k,m] . g [m,n]
                let ad = a.data();
                let mut db = vec![0.0; k * n];
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let aip = ad[i * k + p];
                        if aip == 0.0 {
                            continue;
                        }
                        let drow = &mut db[p * n..(p + 1) * n];
                        for (d, gv) in drow.iter_mut().zip(grow) {
                            *d += aip * gv;
                        }
                    }
                }
                db
            });
            vec![da, db]
        }
        OpKind::Add => {
            let bl = inputs[1].0.numel();
            let da = need(0).then(|| g.to_vec());
            let db = need(1).then(|| reduce_broadcast(g, bl));
            vec![da, db]
        }
        OpKind::Mul => {
            let (a, b) = (inputs[0].0.data(), inputs[1].0.data());
            let bl = b.len();
            let da = need(0).then(|| {
                g.chunks(bl)
                    .flat_map(|gc| gc.iter().zip(b).map(|(x, y)| x * y))
                    .collect()
            });
            let db = need(1).then(|| {
                let prod: Vec<f64> = g.iter().zip(a).map(|(x, y)| x * y).collect();
                reduce_broadcast(&prod, bl)
            });
            vec![da, db]
        }
        OpKind::Concat { axis } => {
            let shape = out.shape();
            let (outer, inner) = outer_inner(shape, *axis);
            let total = shape[*axis];
            let mut offset = 0;
            inputs
                .iter()
                .map(|(t, needs)| {
                    let width = t.shape()[*axis] * inner;
                    let r = needs.then(|| {
                        let mut d = Vec::with_capacity(outer * width);
                        for o in 0..outer {
                            let base = o * total * inner + offset;
                            d.extend_from_slice(&g[base..base + width]);
                        }
                        d
                    });
                    offset += width;
                    r
                })
                .collect()
        }
        OpKind::Slice { axis, start, len } => {
            let s = inputs[0].0.shape();
            let (outer, inner) = outer_inner(s, *axis);
            let mut d = vec![0.0; inputs[0].0.numel()];
            for o in 0..outer {
                let dst = o * s[*axis] * inner + start * inner;
                let src = o * len * inner;
                d[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
            }
            vec![Some(d)]
        }
        OpKind::Transpose => {
            let (r, c) = inputs[0].0.dims2().expect("transpose input");
            let mut d = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    d[i * c + j] = g[j * r + i];
                }
            }
            vec![Some(d)]
        }
        OpKind::Softmax => {
            let cols = *out.shape().last().expect("softmax output rank");
            let y = out.data();
            let mut d = vec![0.0; y.len()];
            for ((dr, yr), gr) in d.chunks_mut(cols).zip(y.chunks(cols)).zip(g.chunks(cols)) {
                let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                for ((dv, yv), gv) in dr.iter_mut().zip(yr).zip(gr) {
                    *dv = yv * (gv - dot);
                }
            }
            vec![Some(d)]
        }
        OpKind::LayerNorm { .. } => {
            let cols = *out.shape().last().expect("layer_norm rank");
            let y = out.data();
            let mut d = vec![0.0; y.len()];
            for (r, ((dr, yr), gr)) in d
                .chunks_mut(cols)
                .zip(y.chunks(cols))
                .zip(g.chunks(cols))
                .enumerate()
            {
                let n = cols as f64;
                let mean_g = gr.iter().sum::<f64>() / n;
                let mean_gy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n;
                for ((dv, yv), gv) in dr.iter_mut().zip(yr).zip(gr) {
                    *dv = saved[r] * (gv - mean_g - yv * mean_gy);
                }
            }
            vec![Some(d)]
        }
        OpKind::Relu => {
            let x = inputs[0].0.data();
            vec![Some(
                g.iter()
                    .zip(x)
                    .map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 })
                    .collect(),
            )]
        }
        OpKind::EmbeddingLookup { ids } => {
            let (_, d) = inputs[0].0.dims2().expect("embedding table");
            let mut dt = vec![0.0; inputs[0].0.numel()];
            for (row, &id) in ids.iter().enumerate() {
                for j in 0..d {
                    dt[id * d + j] += g[row * d + j];
                }
            }
            vec![Some(dt)]
        }
        OpKind::CrossEntropy { targets } => {
            let vocab = *inputs[0].0.shape().last().expect("logits rank");
            let count = targets.iter().flatten().count() as f64;
            let scale = g[0] / count;
            let mut d = vec![0.0; saved.len()];
            for ((dr, pr), t) in d.chunks_mut(vocab).zip(saved.chunks(vocab)).zip(targets) {
                let Some(t) = *t else { continue };
                for (dv, pv) in dr.iter_mut().zip(pr) {
                    *dv = pv * scale;
                }
                dr[t] -= scale;
            }
            vec![Some(d)]
        }
        OpKind::Scale(c) => vec![Some(g.iter().map(|v| v * c).collect())],
        OpKind::StopGradient => vec![None],
        OpKind::Sum => vec![Some(vec![g[0]; inputs[0].0.numel()])],
    }
}

fn reduce_broadcast(g: &[f64], len: usize) -> Vec<f64> {
    let mut d = vec![0.0; len];
    for chunk in g.chunks(len) {
        d.iter_mut().zip(chunk).for_each(|(a, b)| *a += b);
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn identity_matmul_returns_input() {
        let mut g = Graph::new();
        let a = t(&[3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.5]);
        let i = g.constant(Tensor::eye(3));
        let av = g.constant(a.clone());
        let out = g.matmul(i, av).unwrap();
        assert_eq!(g.value(out), &a);
    }

    #[test]
    fn uniform_softmax() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[3]));
        let y = g.softmax(x).unwrap();
        for v in g.value(y).data() {
            assert_abs_diff_eq!(*v, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn softmax_on_scalar_is_an_error() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::scalar(1.0));
        assert!(matches!(g.softmax(x), Err(Error::EmptyAxis)));
    }

    #[test]
    fn uniform_cross_entropy_is_ln2() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[2]));
        let l = g.cross_entropy(x, &[Some(0)]).unwrap();
        assert_abs_diff_eq!(g.value(l).item(), std::f64::consts::LN_2, epsilon = 1e-15);
    }

    #[test]
    fn shape_mismatch_is_descriptive() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("[2, 3]"), "{err}");
        let c = g.constant(Tensor::zeros(&[4]));
        assert!(g.add(a, c).is_err());
    }

    #[test]
    fn square_sum_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(vec![1.0, 2.0]));
        let sq = g.mul(x, x).unwrap();
        let l = g.sum(sq).unwrap();
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.wrt(x).data(), &[2.0, 4.0]);
    }

    #[test]
    fn unrelated_leaf_gets_zero_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(vec![1.0, 2.0]));
        let y = g.param(Tensor::from_vec(vec![3.0]));
        let l = g.sum(x).unwrap();
        let grads = g.backward(l).unwrap();
        assert!(grads.get(y).is_none());
        assert_eq!(grads.wrt(y).data(), &[0.0]);
    }

    #[test]
    fn second_backward_is_stale() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(vec![1.0]));
        let l = g.sum(x).unwrap();
        g.backward(l).unwrap();
        assert!(matches!(g.backward(l), Err(Error::StaleGraph)));
    }

    #[test]
    fn stop_gradient_forward_identity_backward_zero() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(vec![0.5, -1.5, 2.0]));
        let s = g.stop_gradient(x).unwrap();
        assert_eq!(g.value(s).data(), g.value(x).data());
        let l = g.sum(s).unwrap();
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.wrt(x).data(), &[0.0; 3]);

        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(vec![0.5, -1.5, 2.0]));
        let s = g.stop_gradient(x).unwrap();
        let both = g.add(x, s).unwrap();
        let l = g.sum(both).unwrap();
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.wrt(x).data(), &[1.0; 3]);
    }

    #[test]
    fn broadcast_add_sums_bias_gradient() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[3, 2]));
        let b = g.param(Tensor::from_vec(vec![1.0, 2.0]));
        let y = g.add(x, b).unwrap();
        assert_eq!(g.value(y).row(2), &[1.0, 2.0]);
        let l = g.sum(y).unwrap();
        assert_eq!(g.backward(l).unwrap().wrt(b).data(), &[3.0, 3.0]);
    }

    #[test]
    fn concat_and_slice_round_trip() {
        let mut g = Graph::new();
        let a = g.constant(t(&[2, 2], &[1., 2., 3., 4.]));
        let b = g.constant(t(&[2, 1], &[5., 6.]));
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.value(c).data(), &[1., 2., 5., 3., 4., 6.]);
        let s = g.slice(c, 1, 2, 1).unwrap();
        assert_eq!(g.value(s).data(), &[5., 6.]);
        let r = g.concat(&[a, a], 0).unwrap();
        assert_eq!(g.value(r).shape(), &[4, 2]);
    }
}
