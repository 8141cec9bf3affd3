//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] records every operation of one forward pass in creation
//! order (a Wengert tape). [`Graph::backward`] replays the tape in reverse,
//! accumulating gradients for every node that can reach a trainable leaf.
//! Leaves created with [`Graph::param`] remember their registry path so the
//! resulting gradients can be written back with
//! [`Graph::accumulate_param_grads`].

use super::kernels;
use crate::error::{Error, Result};
use crate::registry::ParamRegistry;
use crate::tensor::{Scalar, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// a[m,k] * b[k,n]
    Matmul { a: NodeId, b: NodeId },
    /// a[m,k] * b[n,k]^T
    MatmulTB { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    /// x[r,c] + bias[c] broadcast over rows
    AddBias { x: NodeId, bias: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { x: NodeId, factor: f64 },
    Gelu { x: NodeId },
    LayerNorm { x: NodeId, gamma: NodeId, beta: NodeId, eps: f64 },
    SoftmaxRows { x: NodeId },
    LogSoftmaxRows { x: NodeId },
    /// out[r,g] = sum of x[r,t] over t in groups[g]
    SumGroups { x: NodeId, groups: Vec<Vec<usize>> },
    Gather { x: NodeId, indices: Vec<(usize, usize)> },
    Mean { x: NodeId },
    Conv1d { x: NodeId, w: NodeId, b: NodeId, stride: usize, pad: usize },
    Embed { table: NodeId, ids: Vec<usize> },
    SliceRows { x: NodeId, start: usize },
    SliceCols { x: NodeId, start: usize },
    ConcatRows { parts: Vec<NodeId> },
    ConcatCols { parts: Vec<NodeId> },
    Transpose { x: NodeId },
}

#[derive(Debug)]
struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op,
    needs_grad: bool,
    /// Registry path for trainable parameter leaves.
    param: Option<String>,
}

/// One forward pass worth of recorded computation.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op, needs_grad: bool) -> NodeId {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
            param: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, t: &Tensor<T>) -> NodeId {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, false)
    }

    pub fn constant_from(&mut self, shape: Vec<usize>, data: Vec<T>) -> NodeId {
        self.push(shape, data, Op::Leaf, false)
    }

    /// Free differentiable leaf (op-level tests and reprogram deltas).
    pub fn leaf(&mut self, t: &Tensor<T>, needs_grad: bool) -> NodeId {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, needs_grad)
    }

    /// Leaf bound to a registry entry. Frozen parameters enter as
    /// constants; trainable ones remember their path for gradient
    /// write-back. Fetching the same parameter twice (weight tying) is
    /// fine: both leaves contribute to the same registry gradient.
    pub fn param(&mut self, registry: &ParamRegistry<T>, name: &str) -> Result<NodeId> {
        let t = registry.get(name)?;
        let trainable = t.requires_grad();
        let id = self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, trainable);
        if trainable {
            self.nodes[id.0].param = Some(name.to_string());
        }
        Ok(id)
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn value(&self, id: NodeId) -> &[T] {
        &self.nodes[id.0].value
    }

    pub fn value_tensor(&self, id: NodeId) -> Tensor<T> {
        Tensor::new(self.nodes[id.0].shape.clone(), self.nodes[id.0].value.clone())
            .expect("node shape/value consistent")
    }

    /// Gradient of the last `backward` target w.r.t. this node, if reached.
    pub fn grad(&self, id: NodeId) -> Option<&[T]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    fn dims2(&self, id: NodeId, context: &str) -> Result<(usize, usize)> {
        let s = &self.nodes[id.0].shape;
        if s.len() == 2 {
            Ok((s[0], s[1]))
        } else {
            Err(Error::ShapeMismatch {
                context: context.into(),
                expected: vec![2],
                got: s.clone(),
            })
        }
    }

    // ── Operations ──────────────────────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.dims2(a, "matmul lhs")?;
        let (k2, n) = self.dims2(b, "matmul rhs")?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                context: "matmul".into(),
                expected: vec![m, k],
                got: vec![k2, n],
            });
        }
        let mut out = vec![T::zero(); m * n];
        kernels::matmul(
            &self.nodes[a.0].value,
            &self.nodes[b.0].value,
            m,
            k,
            n,
            &mut out,
        );
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(vec![m, n], out, Op::Matmul { a, b }, needs))
    }

    /// a[m,k] * b[n,k]^T; the workhorse for attention scores and the tied
    /// output projection.
    pub fn matmul_tb(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.dims2(a, "matmul_tb lhs")?;
        let (n, k2) = self.dims2(b, "matmul_tb rhs")?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                context: "matmul_tb".into(),
                expected: vec![m, k],
                got: vec![n, k2],
            });
        }
        let mut out = vec![T::zero(); m * n];
        kernels::matmul_abt(
            &self.nodes[a.0].value,
            &self.nodes[b.0].value,
            m,
            k,
            n,
            &mut out,
        );
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(vec![m, n], out, Op::MatmulTB { a, b }, needs))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(Error::ShapeMismatch {
                context: "add".into(),
                expected: self.nodes[a.0].shape.clone(),
                got: self.nodes[b.0].shape.clone(),
            });
        }
        let out: Vec<T> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(&x, &y)| x + y)
            .collect();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(self.nodes[a.0].shape.clone(), out, Op::Add { a, b }, needs))
    }

    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (r, c) = self.dims2(x, "add_bias input")?;
        if self.nodes[bias.0].shape != [c] {
            return Err(Error::ShapeMismatch {
                context: "add_bias".into(),
                expected: vec![c],
                got: self.nodes[bias.0].shape.clone(),
            });
        }
        let mut out = self.nodes[x.0].value.clone();
        for row in out.chunks_exact_mut(c) {
            for (o, &b) in row.iter_mut().zip(&self.nodes[bias.0].value) {
                *o += b;
            }
        }
        let needs = self.needs(x) || self.needs(bias);
        Ok(self.push(vec![r, c], out, Op::AddBias { x, bias }, needs))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(Error::ShapeMismatch {
                context: "mul".into(),
                expected: self.nodes[a.0].shape.clone(),
                got: self.nodes[b.0].shape.clone(),
            });
        }
        let out: Vec<T> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(&x, &y)| x * y)
            .collect();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(self.nodes[a.0].shape.clone(), out, Op::Mul { a, b }, needs))
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        let f = T::from_f64(factor);
        let out: Vec<T> = self.nodes[x.0].value.iter().map(|&v| v * f).collect();
        let needs = self.needs(x);
        self.push(
            self.nodes[x.0].shape.clone(),
            out,
            Op::Scale { x, factor },
            needs,
        )
    }

    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let out: Vec<T> = self.nodes[x.0]
            .value
            .iter()
            .map(|&v| kernels::gelu_scalar(v))
            .collect();
        let needs = self.needs(x);
        self.push(self.nodes[x.0].shape.clone(), out, Op::Gelu { x }, needs)
    }

    /// Row-wise layer normalization with learned scale and shift.
    pub fn layer_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    ) -> Result<NodeId> {
        let (r, c) = self.dims2(x, "layer_norm input")?;
        if self.nodes[gamma.0].shape != [c] || self.nodes[beta.0].shape != [c] {
            return Err(Error::ShapeMismatch {
                context: "layer_norm scale/shift".into(),
                expected: vec![c],
                got: self.nodes[gamma.0].shape.clone(),
            });
        }
        let epsilon = T::from_f64(eps);
        let inv_c = T::one() / T::from_f64(c as f64);
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            let row = &self.nodes[x.0].value[i * c..(i + 1) * c];
            let mean = row.iter().cloned().sum::<T>() * inv_c;
            let var = row
                .iter()
                .map(|&v| (v - mean) * (v - mean))
                .sum::<T>()
                * inv_c;
            let inv_std = T::one() / (var + epsilon).sqrt();
            let out_row = &mut out[i * c..(i + 1) * c];
            for (j, o) in out_row.iter_mut().enumerate() {
                let xhat = (row[j] - mean) * inv_std;
                *o = self.nodes[gamma.0].value[j] * xhat + self.nodes[beta.0].value[j];
            }
        }
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(vec![r, c], out, Op::LayerNorm { x, gamma, beta, eps }, needs))
    }

    pub fn softmax_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let (r, c) = self.dims2(x, "softmax input")?;
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            kernels::softmax_row(
                &self.nodes[x.0].value[i * c..(i + 1) * c],
                &mut out[i * c..(i + 1) * c],
            );
        }
        let needs = self.needs(x);
        Ok(self.push(vec![r, c], out, Op::SoftmaxRows { x }, needs))
    }

    pub fn log_softmax_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let (r, c) = self.dims2(x, "log_softmax input")?;
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            kernels::log_softmax_row(
                &self.nodes[x.0].value[i * c..(i + 1) * c],
                &mut out[i * c..(i + 1) * c],
            );
        }
        let needs = self.needs(x);
        Ok(self.push(vec![r, c], out, Op::LogSoftmaxRows { x }, needs))
    }

    /// Sums columns of `x` into one output column per group.
    pub fn sum_groups(&mut self, x: NodeId, groups: &[Vec<usize>]) -> Result<NodeId> {
        let (r, c) = self.dims2(x, "sum_groups input")?;
        for g in groups {
            if let Some(&t) = g.iter().find(|&&t| t >= c) {
                return Err(Error::OutOfVocab { token: t, vocab: c });
            }
        }
        let d = groups.len();
        let mut out = vec![T::zero(); r * d];
        for i in 0..r {
            let row = &self.nodes[x.0].value[i * c..(i + 1) * c];
            for (gi, g) in groups.iter().enumerate() {
                out[i * d + gi] = g.iter().map(|&t| row[t]).sum();
            }
        }
        let needs = self.needs(x);
        Ok(self.push(
            vec![r, d],
            out,
            Op::SumGroups {
                x,
                groups: groups.to_vec(),
            },
            needs,
        ))
    }

    /// Picks individual elements of a rank-2 node.
    pub fn gather(&mut self, x: NodeId, indices: &[(usize, usize)]) -> Result<NodeId> {
        let (r, c) = self.dims2(x, "gather input")?;
        for &(i, j) in indices {
            if i >= r || j >= c {
                return Err(Error::ShapeMismatch {
                    context: "gather index".into(),
                    expected: vec![r, c],
                    got: vec![i, j],
                });
            }
        }
        let out: Vec<T> = indices
            .iter()
            .map(|&(i, j)| self.nodes[x.0].value[i * c + j])
            .collect();
        let needs = self.needs(x);
        Ok(self.push(
            vec![indices.len()],
            out,
            Op::Gather {
                x,
                indices: indices.to_vec(),
            },
            needs,
        ))
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let n = self.nodes[x.0].value.len();
        let m = self.nodes[x.0].value.iter().cloned().sum::<T>() / T::from_f64(n as f64);
        let needs = self.needs(x);
        self.push(vec![1], vec![m], Op::Mean { x }, needs)
    }

    pub fn conv1d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        let (c_in, len) = self.dims2(x, "conv1d input")?;
        let ws = self.nodes[w.0].shape.clone();
        if ws.len() != 3 || ws[1] != c_in {
            return Err(Error::ShapeMismatch {
                context: "conv1d weight".into(),
                expected: vec![0, c_in, 0],
                got: ws,
            });
        }
        let (c_out, kernel) = (ws[0], ws[2]);
        if self.nodes[b.0].shape != [c_out] {
            return Err(Error::ShapeMismatch {
                context: "conv1d bias".into(),
                expected: vec![c_out],
                got: self.nodes[b.0].shape.clone(),
            });
        }
        let out_len = kernels::conv1d_out_len(len, kernel, stride, pad);
        let mut out = vec![T::zero(); c_out * out_len];
        kernels::conv1d(
            &self.nodes[x.0].value,
            &self.nodes[w.0].value,
            &self.nodes[b.0].value,
            c_in,
            len,
            c_out,
            kernel,
            stride,
            pad,
            &mut out,
        );
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(
            vec![c_out, out_len],
            out,
            Op::Conv1d { x, w, b, stride, pad },
            needs,
        ))
    }

    /// Row lookup: out[l, :] = table[ids[l], :].
    pub fn embed(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let (v, n) = self.dims2(table, "embed table")?;
        for &id in ids {
            if id >= v {
                return Err(Error::OutOfVocab { token: id, vocab: v });
            }
        }
        let mut out = vec![T::zero(); ids.len() * n];
        for (l, &id) in ids.iter().enumerate() {
            out[l * n..(l + 1) * n].copy_from_slice(&self.nodes[table.0].value[id * n..(id + 1) * n]);
        }
        let needs = self.needs(table);
        Ok(self.push(
            vec![ids.len(), n],
            out,
            Op::Embed {
                table,
                ids: ids.to_vec(),
            },
            needs,
        ))
    }

    pub fn slice_rows(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (r, c) = self.dims2(x, "slice_rows input")?;
        if start + len > r {
            return Err(Error::ShapeMismatch {
                context: "slice_rows range".into(),
                expected: vec![r, c],
                got: vec![start + len, c],
            });
        }
        let out = self.nodes[x.0].value[start * c..(start + len) * c].to_vec();
        let needs = self.needs(x);
        Ok(self.push(vec![len, c], out, Op::SliceRows { x, start }, needs))
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (r, c) = self.dims2(x, "slice_cols input")?;
        if start + len > c {
            return Err(Error::ShapeMismatch {
                context: "slice_cols range".into(),
                expected: vec![r, c],
                got: vec![r, start + len],
            });
        }
        let mut out = vec![T::zero(); r * len];
        for i in 0..r {
            out[i * len..(i + 1) * len]
                .copy_from_slice(&self.nodes[x.0].value[i * c + start..i * c + start + len]);
        }
        let needs = self.needs(x);
        Ok(self.push(vec![r, len], out, Op::SliceCols { x, start }, needs))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let (_, c) = self.dims2(parts[0], "concat_rows part")?;
        let mut rows = 0;
        let mut out = Vec::new();
        let mut needs = false;
        for &p in parts {
            let (r, pc) = self.dims2(p, "concat_rows part")?;
            if pc != c {
                return Err(Error::ShapeMismatch {
                    context: "concat_rows".into(),
                    expected: vec![0, c],
                    got: vec![r, pc],
                });
            }
            rows += r;
            out.extend_from_slice(&self.nodes[p.0].value);
            needs |= self.needs(p);
        }
        Ok(self.push(
            vec![rows, c],
            out,
            Op::ConcatRows {
                parts: parts.to_vec(),
            },
            needs,
        ))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let (r, _) = self.dims2(parts[0], "concat_cols part")?;
        let mut total_c = 0;
        let mut needs = false;
        for &p in parts {
            let (pr, pc) = self.dims2(p, "concat_cols part")?;
            if pr != r {
                return Err(Error::ShapeMismatch {
                    context: "concat_cols".into(),
                    expected: vec![r, 0],
                    got: vec![pr, pc],
                });
            }
            total_c += pc;
            needs |= self.needs(p);
        }
        let mut out = vec![T::zero(); r * total_c];
        for i in 0..r {
            let mut offset = 0;
            for &p in parts {
                let pc = self.nodes[p.0].shape[1];
                out[i * total_c + offset..i * total_c + offset + pc]
                    .copy_from_slice(&self.nodes[p.0].value[i * pc..(i + 1) * pc]);
                offset += pc;
            }
        }
        Ok(self.push(
            vec![r, total_c],
            out,
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
            needs,
        ))
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        let (r, c) = self.dims2(x, "transpose input")?;
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.nodes[x.0].value[i * c + j];
            }
        }
        let needs = self.needs(x);
        Ok(self.push(vec![c, r], out, Op::Transpose { x }, needs))
    }

    // ── Backward ────────────────────────────────────────────────────

    fn accumulate(&mut self, id: NodeId, delta: &[T]) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        let slot = &mut self.grads[id.0];
        match slot {
            Some(g) => {
                for (gi, &d) in g.iter_mut().zip(delta) {
                    *gi += d;
                }
            }
            None => *slot = Some(delta.to_vec()),
        }
    }

    /// Populates gradients of `loss` w.r.t. every node that reaches a
    /// trainable leaf. `loss` must be scalar.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::NonScalarLoss {
                shape: self.nodes[loss.0].shape.clone(),
            });
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..self.nodes.len()).rev() {
            if self.grads[idx].is_none() || !self.nodes[idx].needs_grad {
                continue;
            }
            let grad_out = self.grads[idx].take().expect("checked above");
            let op = self.nodes[idx].op.clone();
            self.backward_op(idx, &op, &grad_out);
            self.grads[idx] = Some(grad_out);
        }
        Ok(())
    }

    fn backward_op(&mut self, idx: usize, op: &Op, g: &[T]) {
        match *op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (m, k) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                let n = self.nodes[b.0].shape[1];
                if self.needs(a) {
                    let mut da = vec![T::zero(); m * k];
                    kernels::matmul_abt(g, &self.nodes[b.0].value, m, n, k, &mut da);
                    self.accumulate(a, &da);
                }
                if self.needs(b) {
                    let mut db = vec![T::zero(); k * n];
                    kernels::matmul_atb(&self.nodes[a.0].value, g, m, k, n, &mut db);
                    self.accumulate(b, &db);
                }
            }
            Op::MatmulTB { a, b } => {
                let (m, k) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                let n = self.nodes[b.0].shape[0];
                if self.needs(a) {
                    let mut da = vec![T::zero(); m * k];
                    kernels::matmul(g, &self.nodes[b.0].value, m, n, k, &mut da);
                    self.accumulate(a, &da);
                }
                if self.needs(b) {
                    let mut db = vec![T::zero(); n * k];
                    kernels::matmul_atb(g, &self.nodes[a.0].value, m, n, k, &mut db);
                    self.accumulate(b, &db);
                }
            }
            Op::Add { a, b } => {
                self.accumulate(a, g);
                self.accumulate(b, g);
            }
            Op::AddBias { x, bias } => {
                self.accumulate(x, g);
                if self.needs(bias) {
                    let c = self.nodes[bias.0].shape[0];
                    let mut db = vec![T::zero(); c];
                    for row in g.chunks_exact(c) {
                        for (d, &gv) in db.iter_mut().zip(row) {
                            *d += gv;
                        }
                    }
                    self.accumulate(bias, &db);
                }
            }
            Op::Mul { a, b } => {
                if self.needs(a) {
                    let da: Vec<T> = g
                        .iter()
                        .zip(&self.nodes[b.0].value)
                        .map(|(&gv, &bv)| gv * bv)
                        .collect();
                    self.accumulate(a, &da);
                }
                if self.needs(b) {
                    let db: Vec<T> = g
                        .iter()
                        .zip(&self.nodes[a.0].value)
                        .map(|(&gv, &av)| gv * av)
                        .collect();
                    self.accumulate(b, &db);
                }
            }
            Op::Scale { x, factor } => {
                let f = T::from_f64(factor);
                let dx: Vec<T> = g.iter().map(|&gv| gv * f).collect();
                self.accumulate(x, &dx);
            }
            Op::Gelu { x } => {
                let dx: Vec<T> = g
                    .iter()
                    .zip(&self.nodes[x.0].value)
                    .map(|(&gv, &xv)| gv * kernels::gelu_grad_scalar(xv))
                    .collect();
                self.accumulate(x, &dx);
            }
            Op::LayerNorm { x, gamma, beta, eps } => {
                let (r, c) = (self.nodes[x.0].shape[0], self.nodes[x.0].shape[1]);
                let epsilon = T::from_f64(eps);
                let inv_c = T::one() / T::from_f64(c as f64);
                let mut dx = vec![T::zero(); r * c];
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for i in 0..r {
                    let row = &self.nodes[x.0].value[i * c..(i + 1) * c];
                    let g_row = &g[i * c..(i + 1) * c];
                    let mean = row.iter().cloned().sum::<T>() * inv_c;
                    let var = row
                        .iter()
                        .map(|&v| (v - mean) * (v - mean))
                        .sum::<T>()
                        * inv_c;
                    let inv_std = T::one() / (var + epsilon).sqrt();
                    // dxhat = g * gamma; dx = inv_std * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat))
                    let mut mean_dxhat = T::zero();
                    let mut mean_dxhat_xhat = T::zero();
                    for j in 0..c {
                        let xhat = (row[j] - mean) * inv_std;
                        let dxhat = g_row[j] * self.nodes[gamma.0].value[j];
                        mean_dxhat += dxhat;
                        mean_dxhat_xhat += dxhat * xhat;
                        dgamma[j] += g_row[j] * xhat;
                        dbeta[j] += g_row[j];
                    }
                    mean_dxhat *= inv_c;
                    mean_dxhat_xhat *= inv_c;
                    for j in 0..c {
                        let xhat = (row[j] - mean) * inv_std;
                        let dxhat = g_row[j] * self.nodes[gamma.0].value[j];
                        dx[i * c + j] = inv_std * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
                    }
                }
                self.accumulate(x, &dx);
                self.accumulate(gamma, &dgamma);
                self.accumulate(beta, &dbeta);
            }
            Op::SoftmaxRows { x } => {
                let c = self.nodes[idx].shape[1];
                let s = &self.nodes[idx].value;
                let mut dx = vec![T::zero(); s.len()];
                for (i, g_row) in g.chunks_exact(c).enumerate() {
                    let s_row = &s[i * c..(i + 1) * c];
                    let dot: T = g_row.iter().zip(s_row).map(|(&gv, &sv)| gv * sv).sum();
                    for j in 0..c {
                        dx[i * c + j] = s_row[j] * (g_row[j] - dot);
                    }
                }
                self.accumulate(x, &dx);
            }
            Op::LogSoftmaxRows { x } => {
                let c = self.nodes[idx].shape[1];
                let y = &self.nodes[idx].value;
                let mut dx = vec![T::zero(); y.len()];
                for (i, g_row) in g.chunks_exact(c).enumerate() {
                    let y_row = &y[i * c..(i + 1) * c];
                    let g_sum: T = g_row.iter().cloned().sum();
                    for j in 0..c {
                        dx[i * c + j] = g_row[j] - y_row[j].exp() * g_sum;
                    }
                }
                self.accumulate(x, &dx);
            }
            Op::SumGroups { x, ref groups } => {
                let c = self.nodes[x.0].shape[1];
                let d = groups.len();
                let r = self.nodes[x.0].shape[0];
                let mut dx = vec![T::zero(); r * c];
                for i in 0..r {
                    for (gi, group) in groups.iter().enumerate() {
                        let gv = g[i * d + gi];
                        for &t in group {
                            dx[i * c + t] += gv;
                        }
                    }
                }
                self.accumulate(x, &dx);
            }
            Op::Gather { x, ref indices } => {
                let c = self.nodes[x.0].shape[1];
                let mut dx = vec![T::zero(); self.nodes[x.0].value.len()];
                for (&(i, j), &gv) in indices.iter().zip(g) {
                    dx[i * c + j] += gv;
                }
                self.accumulate(x, &dx);
            }
            Op::Mean { x } => {
                let n = self.nodes[x.0].value.len();
                let share = g[0] / T::from_f64(n as f64);
                let dx = vec![share; n];
                self.accumulate(x, &dx);
            }
            Op::Conv1d { x, w, b, stride, pad } => {
                let (c_in, len) = (self.nodes[x.0].shape[0], self.nodes[x.0].shape[1]);
                let (c_out, kernel) = (self.nodes[w.0].shape[0], self.nodes[w.0].shape[2]);
                let mut dx = vec![T::zero(); c_in * len];
                let mut dw = vec![T::zero(); self.nodes[w.0].value.len()];
                let mut db = vec![T::zero(); c_out];
                kernels::conv1d_backward(
                    &self.nodes[x.0].value,
                    &self.nodes[w.0].value,
                    g,
                    c_in,
                    len,
                    c_out,
                    kernel,
                    stride,
                    pad,
                    &mut dx,
                    &mut dw,
                    &mut db,
                );
                self.accumulate(x, &dx);
                self.accumulate(w, &dw);
                self.accumulate(b, &db);
            }
            Op::Embed { table, ref ids } => {
                if self.needs(table) {
                    let n = self.nodes[table.0].shape[1];
                    let mut dt = vec![T::zero(); self.nodes[table.0].value.len()];
                    for (l, &id) in ids.iter().enumerate() {
                        for j in 0..n {
                            dt[id * n + j] += g[l * n + j];
                        }
                    }
                    self.accumulate(table, &dt);
                }
            }
            Op::SliceRows { x, start } => {
                let c = self.nodes[x.0].shape[1];
                let mut dx = vec![T::zero(); self.nodes[x.0].value.len()];
                dx[start * c..start * c + g.len()].copy_from_slice(g);
                self.accumulate(x, &dx);
            }
            Op::SliceCols { x, start } => {
                let (r, c) = (self.nodes[x.0].shape[0], self.nodes[x.0].shape[1]);
                let len = self.nodes[idx].shape[1];
                let mut dx = vec![T::zero(); r * c];
                for i in 0..r {
                    dx[i * c + start..i * c + start + len]
                        .copy_from_slice(&g[i * len..(i + 1) * len]);
                }
                self.accumulate(x, &dx);
            }
            Op::ConcatRows { ref parts } => {
                let c = self.nodes[idx].shape[1];
                let mut row = 0;
                for &p in parts {
                    let pr = self.nodes[p.0].shape[0];
                    let slice = &g[row * c..(row + pr) * c];
                    // accumulate borrows self mutably; copy first
                    let delta = slice.to_vec();
                    self.accumulate(p, &delta);
                    row += pr;
                }
            }
            Op::ConcatCols { ref parts } => {
                let r = self.nodes[idx].shape[0];
                let total_c = self.nodes[idx].shape[1];
                let mut offset = 0;
                for &p in parts {
                    let pc = self.nodes[p.0].shape[1];
                    let mut delta = vec![T::zero(); r * pc];
                    for i in 0..r {
                        delta[i * pc..(i + 1) * pc]
                            .copy_from_slice(&g[i * total_c + offset..i * total_c + offset + pc]);
                    }
                    self.accumulate(p, &delta);
                    offset += pc;
                }
            }
            Op::Transpose { x } => {
                let (r, c) = (self.nodes[x.0].shape[0], self.nodes[x.0].shape[1]);
                // g has shape [c, r]
                let mut dx = vec![T::zero(); r * c];
                for i in 0..c {
                    for j in 0..r {
                        dx[j * c + i] = g[i * r + j];
                    }
                }
                self.accumulate(x, &dx);
            }
        }
    }

    /// Adds the gradients of every trainable parameter leaf back into the
    /// registry tensors they were fetched from.
    pub fn accumulate_param_grads(&self, registry: &mut ParamRegistry<T>) -> Result<()> {
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Some(name) = &node.param {
                if let Some(g) = self.grads.get(idx).and_then(|g| g.as_ref()) {
                    registry.get_mut(name)?.accumulate_grad(g)?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_graph(v: f64) -> (Graph<f64>, NodeId) {
        let mut g = Graph::new();
        let t = Tensor::scalar(v);
        let x = g.leaf(&t, true);
        (g, x)
    }

    #[test]
    fn square_gradient() {
        // f(x) = x * x at x = 3 -> df/dx = 6
        let (mut g, x) = scalar_graph(3.0);
        let y = g.mul(x, x).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[6.0]);
    }

    #[test]
    fn identity_gradient() {
        // f(x) = x at x = 5 -> df/dx = 1
        let (mut g, x) = scalar_graph(5.0);
        g.backward(x).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::<f64>::new();
        let t = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let x = g.leaf(&t, true);
        assert!(matches!(
            g.backward(x),
            Err(Error::NonScalarLoss { .. })
        ));
    }

    #[test]
    fn fan_out_accumulates() {
        // f(x) = x*x + x at x = 3 -> 2x + 1 = 7
        let (mut g, x) = scalar_graph(3.0);
        let sq = g.mul(x, x).unwrap();
        let y = g.add(sq, x).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[7.0]);
    }

    #[test]
    fn frozen_leaf_gets_no_gradient() {
        let mut g = Graph::<f64>::new();
        let a = g.leaf(&Tensor::scalar(2.0), true);
        let b = g.leaf(&Tensor::scalar(4.0), false);
        let y = g.mul(a, b).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(a).unwrap(), &[4.0]);
        assert!(g.grad(b).is_none());
    }

    #[test]
    fn param_grads_accumulate_for_tied_leaves() {
        // Fetch the same parameter twice; both uses contribute.
        let mut reg = ParamRegistry::<f64>::new();
        let mut w = Tensor::new(vec![1], vec![3.0]).unwrap();
        w.set_requires_grad(true);
        reg.insert("w", w).unwrap();

        let mut g = Graph::new();
        let a = g.param(&reg, "w").unwrap();
        let b = g.param(&reg, "w").unwrap();
        let y = g.mul(a, b).unwrap(); // w^2
        g.backward(y).unwrap();
        g.accumulate_param_grads(&mut reg).unwrap();
        assert_eq!(reg.get("w").unwrap().grad().unwrap(), &[6.0]);
    }

    #[test]
    fn matmul_known_gradient() {
        // loss = sum(A*B) via mean * numel; dA = 1*B^T, dB = A^T*1
        let mut g = Graph::<f64>::new();
        let a = g.leaf(
            &Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
            true,
        );
        let b = g.leaf(
            &Tensor::new(vec![2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap(),
            true,
        );
        let c = g.matmul(a, b).unwrap();
        let m = g.mean(c);
        let loss = g.scale(m, 4.0); // sum
        g.backward(loss).unwrap();
        // d(sum(AB))/dA[i,p] = sum_j B[p,j]
        assert_eq!(g.grad(a).unwrap(), &[11.0, 15.0, 11.0, 15.0]);
        // d(sum(AB))/dB[p,j] = sum_i A[i,p]
        assert_eq!(g.grad(b).unwrap(), &[4.0, 4.0, 6.0, 6.0]);
    }

    #[test]
    fn shape_errors_are_reported() {
        let mut g = Graph::<f64>::new();
        let a = g.leaf(&Tensor::zeros(vec![2, 3]), false);
        let b = g.leaf(&Tensor::zeros(vec![2, 3]), false);
        assert!(g.matmul(a, b).is_err());
        assert!(g.add_bias(a, b).is_err());
    }
}
