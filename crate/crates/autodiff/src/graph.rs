//! Dynamic compute graph.
//!
//! Every forward op appends one node; `backward` walks the nodes in reverse
//! insertion order, which is a valid reverse topological order because a node
//! can only reference nodes created before it.

use crate::error::{Result, TensorError};
use crate::kernels::{gemm_nn, gemm_nt, gemm_tn, permute_into};
use crate::tensor::{axis_split, Tensor};

/// Layer-norm variance floor.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    BatchMatMul {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        trans_b: bool,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBroadcast(Var, Var),
    MulBroadcast(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    LayerNorm {
        x: Var,
        normed: Vec<f64>,
        inv_std: Vec<f64>,
    },
    SumAll(Var),
    MeanAll(Var),
    MeanAxis {
        x: Var,
        axis: usize,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Narrow {
        x: Var,
        axis: usize,
        start: usize,
    },
    Reshape(Var),
    Permute {
        x: Var,
        perm: Vec<usize>,
    },
    GatherRows {
        table: Var,
        indices: Vec<usize>,
    },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => Vec::new(),
            Op::BatchMatMul { a, b, .. }
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddBroadcast(a, b)
            | Op::MulBroadcast(a, b) => vec![*a, *b],
            Op::Scale(x, _)
            | Op::Relu(x)
            | Op::Softmax { x, .. }
            | Op::LayerNorm { x, .. }
            | Op::SumAll(x)
            | Op::MeanAll(x)
            | Op::MeanAxis { x, .. }
            | Op::Narrow { x, .. }
            | Op::Reshape(x)
            | Op::Permute { x, .. }
            | Op::GatherRows { table: x, .. } => vec![*x],
            Op::Concat { inputs, .. } => inputs.clone(),
        }
    }
}

/// Gradient slots for one backward sweep. Nodes that no trainable leaf
/// feeds into never get a slot.
struct Grads {
    slots: Vec<Option<Vec<f64>>>,
    needed: Vec<bool>,
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    trainable: bool,
}

/// Records operations for one forward pass and differentiates them.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
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
        self.nodes.push(Node {
            value,
            op,
            trainable: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf whose gradient is collected by `backward`.
    pub fn param(&mut self, value: Tensor) -> Var {
        let v = self.push(value, Op::Leaf);
        self.nodes[v.0].trainable = true;
        v
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    /// Gradient populated by the last `backward` call, if the node was reached.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    // ---------------------------------------------------------------- linear

    /// `[m,k] · [k,n] → [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::Dimension {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        self.bmm_impl(a, b, 1, sa[0], sa[1], sb[1], false, vec![sa[0], sb[1]])
    }

    /// Batched matmul `[B,m,k] · [B,k,n] → [B,m,n]`, or with `trans_b`
    /// `[B,m,k] · [B,n,k]ᵀ → [B,m,n]`.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let err = || TensorError::Dimension {
            op: "bmm",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(err());
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let n = if trans_b {
            if sb[2] != k {
                return Err(err());
            }
            sb[1]
        } else {
            if sb[1] != k {
                return Err(err());
            }
            sb[2]
        };
        self.bmm_impl(a, b, batch, m, k, n, trans_b, vec![batch, m, n])
    }

    #[allow(clippy::too_many_arguments)]
    fn bmm_impl(
        &mut self,
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        trans_b: bool,
        out_shape: Vec<usize>,
    ) -> Result<Var> {
        let mut out = vec![0.0; batch * m * n];
        {
            let (ad, bd) = (self.data(a), self.data(b));
            for bi in 0..batch {
                let a_s = &ad[bi * m * k..(bi + 1) * m * k];
                let b_s = &bd[bi * k * n..(bi + 1) * k * n];
                let o_s = &mut out[bi * m * n..(bi + 1) * m * n];
                if trans_b {
                    gemm_nt(a_s, b_s, o_s, m, k, n);
                } else {
                    gemm_nn(a_s, b_s, o_s, m, k, n);
                }
            }
        }
        let value = Tensor::new(out_shape, out)?;
        Ok(self.push(
            value,
            Op::BatchMatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                trans_b,
            },
        ))
    }

    // ----------------------------------------------------------- elementwise

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::Dimension {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(self.shape(a).to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.zip_with(a, b, |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.zip_with(a, b, |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.zip_with(a, b, |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b)))
    }

    fn check_broadcast(&self, op: &'static str, a: Var, b: Var) -> Result<usize> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let last = *sa.last().expect("rank >= 1");
        if sb.len() != 1 || sb[0] != last {
            return Err(TensorError::Dimension {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(last)
    }

    /// Adds a length-`n` vector to every trailing slice of `a` (`[..., n]`).
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let n = self.check_broadcast("add_broadcast", a, b)?;
        let bd = self.data(b);
        let data = self
            .data(a)
            .iter()
            .enumerate()
            .map(|(i, &x)| x + bd[i % n])
            .collect();
        let v = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(v, Op::AddBroadcast(a, b)))
    }

    /// Multiplies every trailing slice of `a` by a length-`n` vector.
    pub fn mul_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let n = self.check_broadcast("mul_broadcast", a, b)?;
        let bd = self.data(b);
        let data = self
            .data(a)
            .iter()
            .enumerate()
            .map(|(i, &x)| x * bd[i % n])
            .collect();
        let v = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(v, Op::MulBroadcast(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let data = self.data(a).iter().map(|&x| x * s).collect();
        let v = Tensor::new(self.shape(a).to_vec(), data).expect("same shape");
        self.push(v, Op::Scale(a, s))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let data = self.data(a).iter().map(|&x| x.max(0.0)).collect();
        let v = Tensor::new(self.shape(a).to_vec(), data).expect("same shape");
        self.push(v, Op::Relu(a))
    }

    // ----------------------------------------------------------- reductions

    fn check_axis(&self, op: &'static str, x: Var, axis: usize) -> Result<()> {
        let rank = self.shape(x).len();
        if axis >= rank {
            return Err(TensorError::Axis { op, axis, rank });
        }
        Ok(())
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("softmax", x, axis)?;
        let shape = self.shape(x).to_vec();
        let (outer, len, inner) = axis_split(&shape, axis);
        let xd = self.data(x);
        let mut out = vec![0.0; xd.len()];
        for o in 0..outer {
            for j in 0..inner {
                let at = |i: usize| (o * len + i) * inner + j;
                let max = (0..len).map(|i| xd[at(i)]).fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for i in 0..len {
                    let e = (xd[at(i)] - max).exp();
                    out[at(i)] = e;
                    sum += e;
                }
                for i in 0..len {
                    out[at(i)] /= sum;
                }
            }
        }
        let v = Tensor::new(shape, out)?;
        Ok(self.push(v, Op::Softmax { x, axis }))
    }

    /// Softmax along the last axis restricted to positions where `mask` is
    /// true. `mask` covers the trailing two dims `[m, n]` and is broadcast over
    /// any leading dims. Masked positions get exactly zero weight.
    pub fn softmax_masked(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let rank = shape.len();
        if rank < 2 || mask.len() != shape[rank - 2] * shape[rank - 1] {
            return Err(TensorError::Dimension {
                op: "softmax_masked",
                lhs: shape,
                rhs: vec![mask.len()],
            });
        }
        let n = shape[rank - 1];
        let m = shape[rank - 2];
        for r in 0..m {
            if !mask[r * n..(r + 1) * n].iter().any(|&b| b) {
                return Err(TensorError::Contract(format!(
                    "softmax_masked: mask row {r} admits no position"
                )));
            }
        }
        let xd = self.data(x);
        let mut out = vec![0.0; xd.len()];
        for (row_idx, (xr, or)) in xd.chunks(n).zip(out.chunks_mut(n)).enumerate() {
            let mrow = &mask[(row_idx % m) * n..(row_idx % m + 1) * n];
            let max = xr
                .iter()
                .zip(mrow)
                .filter(|(_, &ok)| ok)
                .map(|(&v, _)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for ((o, &v), &ok) in or.iter_mut().zip(xr).zip(mrow) {
                if ok {
                    *o = (v - max).exp();
                    sum += *o;
                }
            }
            for o in or.iter_mut() {
                *o /= sum;
            }
        }
        let v = Tensor::new(shape.clone(), out)?;
        Ok(self.push(
            v,
            Op::Softmax {
                x,
                axis: rank - 1,
            },
        ))
    }

    /// Normalizes each trailing slice to zero mean and unit variance.
    pub fn layer_norm(&mut self, x: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let n = *shape.last().expect("rank >= 1");
        let xd = self.data(x);
        let rows = xd.len() / n;
        let mut normed = vec![0.0; xd.len()];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = &xd[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = is;
            for (o, &v) in normed[r * n..(r + 1) * n].iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
        }
        let v = Tensor::new(shape, normed.clone()).expect("same shape");
        self.push(v, Op::LayerNorm { x, normed, inv_std })
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let d = self.data(x);
        let s = d.iter().sum::<f64>() / d.len() as f64;
        self.push(Tensor::scalar(s), Op::MeanAll(x))
    }

    /// Mean along `axis`; the axis is removed from the shape (rank-1 inputs
    /// reduce to shape `[1]`).
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("mean_axis", x, axis)?;
        let shape = self.shape(x).to_vec();
        let (outer, len, inner) = axis_split(&shape, axis);
        let xd = self.data(x);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..len {
                for j in 0..inner {
                    out[o * inner + j] += xd[(o * len + i) * inner + j];
                }
            }
        }
        out.iter_mut().for_each(|v| *v /= len as f64);
        let mut out_shape: Vec<usize> = shape
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != axis)
            .map(|(_, &d)| d)
            .collect();
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let v = Tensor::new(out_shape, out)?;
        Ok(self.push(v, Op::MeanAxis { x, axis }))
    }

    // -------------------------------------------------------------- layout

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| TensorError::Contract("concat of zero tensors".into()))?;
        self.check_axis("concat", first, axis)?;
        let base = self.shape(first).to_vec();
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(TensorError::Dimension {
                    op: "concat",
                    lhs: base,
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_split(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let len = self.shape(v)[axis];
                let d = self.data(v);
                out.extend_from_slice(&d[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let t = Tensor::new(shape, out)?;
        Ok(self.push(
            t,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
        ))
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.check_axis("narrow", x, axis)?;
        let shape = self.shape(x).to_vec();
        if len == 0 || start + len > shape[axis] {
            return Err(TensorError::Contract(format!(
                "narrow [{start}, {}) outside axis {axis} of {shape:?}",
                start + len
            )));
        }
        let (outer, full, inner) = axis_split(&shape, axis);
        let xd = self.data(x);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            out.extend_from_slice(&xd[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let t = Tensor::new(out_shape, out)?;
        Ok(self.push(t, Op::Narrow { x, axis, start }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).reshaped(shape)?;
        Ok(self.push(t, Op::Reshape(x)))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        let valid = perm.len() == shape.len()
            && perm.iter().all(|&p| p < seen.len() && !std::mem::replace(&mut seen[p], true));
        if !valid {
            return Err(TensorError::Contract(format!(
                "permute: {perm:?} is not a permutation of rank {}",
                shape.len()
            )));
        }
        let mut out = vec![0.0; self.value(x).numel()];
        permute_into(self.data(x), &shape, perm, &mut out);
        let out_shape = perm.iter().map(|&p| shape[p]).collect();
        let t = Tensor::new(out_shape, out)?;
        Ok(self.push(
            t,
            Op::Permute {
                x,
                perm: perm.to_vec(),
            },
        ))
    }

    /// Embedding lookup: rows `indices` of a `[V, E]` table → `[len, E]`.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let shape = self.shape(table).to_vec();
        if shape.len() != 2 {
            return Err(TensorError::Contract(format!(
                "gather_rows needs a matrix, got {shape:?}"
            )));
        }
        let (rows, cols) = (shape[0], shape[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(TensorError::Contract(format!(
                "gather_rows: index {bad} out of range for {rows} rows"
            )));
        }
        if indices.is_empty() {
            return Err(TensorError::Contract("gather_rows: no indices".into()));
        }
        let td = self.data(table);
        let mut out = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            out.extend_from_slice(&td[i * cols..(i + 1) * cols]);
        }
        let t = Tensor::new(vec![indices.len(), cols], out)?;
        Ok(self.push(
            t,
            Op::GatherRows {
                table,
                indices: indices.to_vec(),
            },
        ))
    }

    // ------------------------------------------------------------ backward

    /// Reverse-mode sweep from a scalar `loss`. Afterwards every node between
    /// a trainable leaf and the loss has a gradient, and every trainable leaf
    /// has one (zeros if unreached).
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.shape(loss) != [1] {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss of shape [1], got {:?}",
                self.shape(loss)
            )));
        }
        let mut needed = vec![false; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            needed[i] = node.trainable || node.op.inputs().iter().any(|v| needed[v.0]);
        }
        let mut grads = Grads {
            slots: vec![None; self.nodes.len()],
            needed,
        };
        grads.slots[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads.slots[i].take() else {
                continue;
            };
            self.propagate(i, &g, &mut grads);
            self.nodes[i].value.set_grad(g);
        }
        for node in &mut self.nodes {
            if node.trainable && node.value.grad().is_none() {
                let n = node.value.numel();
                node.value.set_grad(vec![0.0; n]);
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut Grads) {
        let node = &self.nodes[i];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            &Op::BatchMatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                trans_b,
            } => {
                let (ad, bd) = (self.data(a), self.data(b));
                accumulate(grads, a, ad.len(), |da| {
                    for bi in 0..batch {
                        let gs = &g[bi * m * n..(bi + 1) * m * n];
                        let bs = &bd[bi * k * n..(bi + 1) * k * n];
                        let das = &mut da[bi * m * k..(bi + 1) * m * k];
                        if trans_b {
                            gemm_nn(gs, bs, das, m, n, k);
                        } else {
                            gemm_nt(gs, bs, das, m, n, k);
                        }
                    }
                });
                accumulate(grads, b, bd.len(), |db| {
                    for bi in 0..batch {
                        let gs = &g[bi * m * n..(bi + 1) * m * n];
                        let as_ = &ad[bi * m * k..(bi + 1) * m * k];
                        let dbs = &mut db[bi * k * n..(bi + 1) * k * n];
                        if trans_b {
                            gemm_tn(gs, as_, dbs, n, m, k);
                        } else {
                            gemm_tn(as_, gs, dbs, k, m, n);
                        }
                    }
                });
            }
            &Op::Add(a, b) => {
                accumulate(grads, a, g.len(), |d| add_into(d, g));
                accumulate(grads, b, g.len(), |d| add_into(d, g));
            }
            &Op::Sub(a, b) => {
                accumulate(grads, a, g.len(), |d| add_into(d, g));
                accumulate(grads, b, g.len(), |d| {
                    d.iter_mut().zip(g).for_each(|(x, &y)| *x -= y)
                });
            }
            &Op::Mul(a, b) => {
                let (ad, bd) = (self.data(a), self.data(b));
                accumulate(grads, a, g.len(), |d| {
                    for ((x, &gy), &bv) in d.iter_mut().zip(g).zip(bd) {
                        *x += gy * bv;
                    }
                });
                accumulate(grads, b, g.len(), |d| {
                    for ((x, &gy), &av) in d.iter_mut().zip(g).zip(ad) {
                        *x += gy * av;
                    }
                });
            }
            &Op::AddBroadcast(a, b) => {
                let n = self.value(b).numel();
                accumulate(grads, a, g.len(), |d| add_into(d, g));
                accumulate(grads, b, n, |d| {
                    for (idx, &gy) in g.iter().enumerate() {
                        d[idx % n] += gy;
                    }
                });
            }
            &Op::MulBroadcast(a, b) => {
                let (ad, bd) = (self.data(a), self.data(b));
                let n = bd.len();
                accumulate(grads, a, g.len(), |d| {
                    for (idx, (x, &gy)) in d.iter_mut().zip(g).enumerate() {
                        *x += gy * bd[idx % n];
                    }
                });
                accumulate(grads, b, n, |d| {
                    for (idx, (&gy, &av)) in g.iter().zip(ad).enumerate() {
                        d[idx % n] += gy * av;
                    }
                });
            }
            &Op::Scale(a, s) => {
                accumulate(grads, a, g.len(), |d| {
                    d.iter_mut().zip(g).for_each(|(x, &gy)| *x += gy * s)
                });
            }
            &Op::Relu(a) => {
                let ad = self.data(a);
                accumulate(grads, a, g.len(), |d| {
                    for ((x, &gy), &av) in d.iter_mut().zip(g).zip(ad) {
                        if av > 0.0 {
                            *x += gy;
                        }
                    }
                });
            }
            &Op::Softmax { x, axis } => {
                let shape = node.value.shape();
                let (outer, len, inner) = axis_split(shape, axis);
                accumulate(grads, x, g.len(), |d| {
                    for o in 0..outer {
                        for j in 0..inner {
                            let at = |i: usize| (o * len + i) * inner + j;
                            let dot: f64 = (0..len).map(|i| g[at(i)] * out[at(i)]).sum();
                            for i in 0..len {
                                d[at(i)] += out[at(i)] * (g[at(i)] - dot);
                            }
                        }
                    }
                });
            }
            Op::LayerNorm { x, normed, inv_std } => {
                let n = *node.value.shape().last().expect("rank");
                let nf = n as f64;
                accumulate(grads, *x, g.len(), |d| {
                    for (r, &is) in inv_std.iter().enumerate() {
                        let gs = &g[r * n..(r + 1) * n];
                        let xs = &normed[r * n..(r + 1) * n];
                        let sum_g: f64 = gs.iter().sum();
                        let sum_gx: f64 = gs.iter().zip(xs).map(|(a, b)| a * b).sum();
                        for c in 0..n {
                            d[r * n + c] += is / nf * (nf * gs[c] - sum_g - xs[c] * sum_gx);
                        }
                    }
                });
            }
            &Op::SumAll(x) => {
                let n = self.value(x).numel();
                accumulate(grads, x, n, |d| d.iter_mut().for_each(|v| *v += g[0]));
            }
            &Op::MeanAll(x) => {
                let n = self.value(x).numel();
                let s = g[0] / n as f64;
                accumulate(grads, x, n, |d| d.iter_mut().for_each(|v| *v += s));
            }
            &Op::MeanAxis { x, axis } => {
                let (outer, len, inner) = axis_split(self.shape(x), axis);
                let lf = len as f64;
                accumulate(grads, x, outer * len * inner, |d| {
                    for o in 0..outer {
                        for i in 0..len {
                            for j in 0..inner {
                                d[(o * len + i) * inner + j] += g[o * inner + j] / lf;
                            }
                        }
                    }
                });
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = axis_split(node.value.shape(), *axis);
                let mut offset = 0;
                for &v in inputs {
                    let len = self.shape(v)[*axis];
                    accumulate(grads, v, outer * len * inner, |d| {
                        for o in 0..outer {
                            let src = (o * total + offset) * inner;
                            add_into(
                                &mut d[o * len * inner..(o + 1) * len * inner],
                                &g[src..src + len * inner],
                            );
                        }
                    });
                    offset += len;
                }
            }
            &Op::Narrow { x, axis, start } => {
                let in_shape = self.shape(x);
                let (outer, full, inner) = axis_split(in_shape, axis);
                let len = node.value.shape()[axis];
                accumulate(grads, x, outer * full * inner, |d| {
                    for o in 0..outer {
                        let dst = (o * full + start) * inner;
                        add_into(
                            &mut d[dst..dst + len * inner],
                            &g[o * len * inner..(o + 1) * len * inner],
                        );
                    }
                });
            }
            &Op::Reshape(x) => {
                accumulate(grads, x, g.len(), |d| add_into(d, g));
            }
            Op::Permute { x, perm } => {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                accumulate(grads, *x, g.len(), |d| {
                    permute_into(g, node.value.shape(), &inv, d)
                });
            }
            Op::GatherRows { table, indices } => {
                let cols = self.shape(*table)[1];
                let n = self.value(*table).numel();
                accumulate(grads, *table, n, |d| {
                    for (r, &idx) in indices.iter().enumerate() {
                        add_into(
                            &mut d[idx * cols..(idx + 1) * cols],
                            &g[r * cols..(r + 1) * cols],
                        );
                    }
                });
            }
        }
    }
}

fn accumulate(grads: &mut Grads, v: Var, len: usize, f: impl FnOnce(&mut [f64])) {
    if !grads.needed[v.0] {
        return;
    }
    let slot = grads.slots[v.0].get_or_insert_with(|| vec![0.0; len]);
    f(slot);
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
}
