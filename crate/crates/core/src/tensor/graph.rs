use rand::Rng;

use super::Tensor;
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Deliberate corruption of a backward rule, used to prove that the
/// gradient checker notices broken derivatives.
#[doc(hidden)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// ReLU passes the upstream gradient through negative inputs too.
    ReluBackward,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    MatMul(Var, Var),
    Relu(Var),
    Reshape(Var),
    Permute {
        x: Var,
        offsets: Vec<usize>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    MaskedSoftmax(Var),
    MeanPool {
        x: Var,
        mask: Vec<bool>,
        counts: Vec<usize>,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Concat {
        a: Var,
        b: Var,
    },
    Dropout {
        x: Var,
        multipliers: Vec<f64>,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        probs: Vec<f64>,
        labels: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A recording of tensor operations in creation (hence topological) order.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    fault: Option<Fault>,
}

/// Parameters of a [`ParamStore`] placed on a graph as leaves.
#[derive(Clone, Debug)]
pub struct Binding {
    vars: Vec<Option<Var>>,
}

impl Binding {
    /// The leaf bound to `id`.
    ///
    /// Panics when `id` was not bound, which is a wiring bug in the caller.
    pub fn var(&self, id: ParamId) -> Var {
        self.vars
            .get(id.index())
            .copied()
            .flatten()
            .unwrap_or_else(|| panic!("parameter {} is not bound on this graph", id.index()))
    }

    pub fn is_bound(&self, id: ParamId) -> bool {
        matches!(self.vars.get(id.index()), Some(Some(_)))
    }

    /// Gradients of every bound parameter, in parameter order. Parameters
    /// unreachable from the loss get no entry.
    pub fn gradients<'g>(&self, graph: &'g Graph) -> Vec<(ParamId, &'g Tensor)> {
        self.vars
            .iter()
            .enumerate()
            .filter_map(|(i, v)| {
                let v = (*v)?;
                graph.grad(v).map(|g| (ParamId::from_index(i), g))
            })
            .collect()
    }
}

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

/// `c (+)= a · b` where `a` is logically `[m, k]` and `b` is `[k, n]`.
/// `*_t` marks an operand stored transposed.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.fill(0.0);
        }
        return;
    }
    let (rsa, csa) = if a_t { (1, m) } else { (k, 1) };
    let (rsb, csb) = if b_t { (1, k) } else { (n, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the slices hold exactly the m*k, k*n and m*n elements addressed
    // by these dimensions and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// For every element of the permuted output, the offset it reads in the input.
fn permute_offsets(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let rank = shape.len();
    let mut strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let out_strides: Vec<usize> = axes.iter().map(|&a| strides[a]).collect();
    let numel: usize = shape.iter().product();
    let mut offsets = Vec::with_capacity(numel);
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    for _ in 0..numel {
        offsets.push(offset);
        for d in (0..rank).rev() {
            idx[d] += 1;
            offset += out_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            offset -= out_strides[d] * idx[d];
            idx[d] = 0;
        }
    }
    offsets
}

/// Splits a `[.., T, d]` (or `[T, d]`) shape into `(rows, T, d)`.
fn pool_dims(op: &'static str, shape: &[usize], mask_len: usize) -> Result<(usize, usize, usize)> {
    let (b, t, d) = match *shape {
        [t, d] => (1, t, d),
        [b, t, d] => (b, t, d),
        _ => return Err(shape_err(op, shape, &[mask_len])),
    };
    if b * t != mask_len {
        return Err(shape_err(op, shape, &[mask_len]));
    }
    Ok((b, t, d))
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    #[doc(hidden)]
    pub fn with_fault(fault: Fault) -> Self {
        Graph {
            fault: Some(fault),
            ..Graph::default()
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Gradient of the last `backward` loss with respect to `v`, if `v`
    /// requires gradients and was reached.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Places the listed parameters on the graph; they require gradients
    /// when `trainable` is set.
    pub fn bind(&mut self, store: &ParamStore, ids: &[ParamId], trainable: bool) -> Binding {
        let mut vars = vec![None; store.len()];
        for &id in ids {
            let value = store.get(id).clone();
            vars[id.index()] = Some(self.push(value, Op::Leaf, trainable));
        }
        Binding { vars }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("add", ta.shape(), tb.shape()));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    /// Adds a `[d]` vector to every row of a `[.., d]` tensor.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let d = tb.len();
        if tb.shape().len() != 1 || tx.shape().is_empty() || tx.last_dim() != d {
            return Err(shape_err("add_bias", tx.shape(), tb.shape()));
        }
        let mut data = tx.data().to_vec();
        if d > 0 {
            for row in data.chunks_exact_mut(d) {
                for (v, b) in row.iter_mut().zip(tb.data()) {
                    *v += b;
                }
            }
        }
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(value, Op::AddBias(x, bias), rg))
    }

    /// Elementwise product.
    pub fn multiply(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("multiply", ta.shape(), tb.shape()));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let tx = self.value(x);
        let data = tx.data().iter().map(|v| v * factor).collect();
        let value = Tensor::new(tx.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(x);
        self.push(value, Op::Scale(x, factor), rg)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(total), Op::Sum(x), rg)
    }

    /// Matrix product of `[m, k] × [k, n]`, or a batched product of
    /// `[b, m, k] × [b, k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (batch, m, k, k2, n) = match (ta.shape(), tb.shape()) {
            (&[m, k], &[k2, n]) => (1, m, k, k2, n),
            (&[ba, m, k], &[bb, k2, n]) if ba == bb => (ba, m, k, k2, n),
            (l, r) => return Err(shape_err("matmul", l, r)),
        };
        if k != k2 {
            return Err(shape_err("matmul", ta.shape(), tb.shape()));
        }
        let mut out = vec![0.0; batch * m * n];
        for i in 0..batch {
            gemm(
                m,
                k,
                n,
                &ta.data()[i * m * k..(i + 1) * m * k],
                false,
                &tb.data()[i * k * n..(i + 1) * k * n],
                false,
                &mut out[i * m * n..(i + 1) * m * n],
                false,
            );
        }
        let shape = if ta.shape().len() == 2 {
            vec![m, n]
        } else {
            vec![batch, m, n]
        };
        let value = Tensor::new(shape, out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let data = tx
            .data()
            .iter()
            .map(|&v| if v > 0.0 { v } else { 0.0 })
            .collect();
        let value = Tensor::new(tx.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(x);
        self.push(value, Op::Relu(x), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape.to_vec())?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        let rank = tx.shape().len();
        let mut seen = vec![false; rank];
        for &a in axes {
            if a >= rank || seen[a] {
                return Err(shape_err("permute", tx.shape(), axes));
            }
            seen[a] = true;
        }
        if axes.len() != rank {
            return Err(shape_err("permute", tx.shape(), axes));
        }
        let offsets = permute_offsets(tx.shape(), axes);
        let data = offsets.iter().map(|&o| tx.data()[o]).collect();
        let shape: Vec<usize> = axes.iter().map(|&a| tx.shape()[a]).collect();
        let value = Tensor::new(shape, data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Permute { x, offsets }, rg))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let rank = self.shape(x).len();
        if rank < 2 {
            return Err(shape_err("transpose", self.shape(x), &[]));
        }
        let mut axes: Vec<usize> = (0..rank).collect();
        axes.swap(rank - 2, rank - 1);
        self.permute(x, &axes)
    }

    /// Gathers rows of a `[vocab, d]` table.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tt = self.value(table);
        let &[vocab, d] = tt.shape() else {
            return Err(shape_err("embedding", tt.shape(), &[ids.len()]));
        };
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= vocab {
                return Err(Error::Index {
                    what: "embedding table",
                    index: id,
                    bound: vocab,
                });
            }
            data.extend_from_slice(&tt.data()[id * d..(id + 1) * d]);
        }
        let value = Tensor::new(vec![ids.len(), d], data)?;
        let rg = self.rg(table);
        Ok(self.push(
            value,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Normalizes each row over the last axis, then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gain), self.value(bias));
        let d = tx.last_dim();
        if tx.shape().is_empty() || tg.shape() != [d] || tb.shape() != [d] || d == 0 {
            return Err(shape_err("layer_norm", tx.shape(), tg.shape()));
        }
        let rows = tx.len() / d;
        let mut xhat = Vec::with_capacity(tx.len());
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(tx.len());
        for row in tx.data().chunks_exact(d) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            for (j, v) in row.iter().enumerate() {
                let h = (v - mean) * is;
                xhat.push(h);
                out.push(h * tg.data()[j] + tb.data()[j]);
            }
        }
        let value = Tensor::new(tx.shape().to_vec(), out)?;
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Softmax over the last axis of `[groups, queries, keys]` scores.
    /// Group `g` belongs to sequence `g / groups_per_seq`; keys whose
    /// `key_mask` flag is false get probability exactly zero.
    pub fn masked_softmax(
        &mut self,
        x: Var,
        key_mask: &[bool],
        groups_per_seq: usize,
    ) -> Result<Var> {
        let tx = self.value(x);
        let &[groups, tq, tk] = tx.shape() else {
            return Err(shape_err("masked_softmax", tx.shape(), &[key_mask.len()]));
        };
        if groups_per_seq == 0
            || groups % groups_per_seq != 0
            || (groups / groups_per_seq) * tk != key_mask.len()
        {
            return Err(shape_err("masked_softmax", tx.shape(), &[key_mask.len()]));
        }
        let mut out = vec![0.0; tx.len()];
        for g in 0..groups {
            let mask = &key_mask[(g / groups_per_seq) * tk..(g / groups_per_seq + 1) * tk];
            if !mask.iter().any(|&m| m) {
                return Err(Error::EmptySequence("masked_softmax"));
            }
            for q in 0..tq {
                let base = (g * tq + q) * tk;
                let row = &tx.data()[base..base + tk];
                let max = row
                    .iter()
                    .zip(mask)
                    .filter(|(_, &m)| m)
                    .map(|(v, _)| *v)
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..tk {
                    if mask[j] {
                        let e = (row[j] - max).exp();
                        out[base + j] = e;
                        total += e;
                    }
                }
                for v in &mut out[base..base + tk] {
                    *v /= total;
                }
            }
        }
        let value = Tensor::new(tx.shape().to_vec(), out)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::MaskedSoftmax(x), rg))
    }

    /// Mean over valid positions of `[T, d]` (mask length `T`) or
    /// `[B, T, d]` (mask length `B·T`), giving `[d]` or `[B, d]`.
    pub fn mean_pool(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let tx = self.value(x);
        let (b, t, d) = pool_dims("mean_pool", tx.shape(), mask.len())?;
        let mut out = vec![0.0; b * d];
        let mut counts = Vec::with_capacity(b);
        for r in 0..b {
            let count = mask[r * t..(r + 1) * t].iter().filter(|&&m| m).count();
            if count == 0 {
                return Err(Error::EmptySequence("mean_pool"));
            }
            counts.push(count);
            let acc = &mut out[r * d..(r + 1) * d];
            for p in 0..t {
                if mask[r * t + p] {
                    let row = &tx.data()[(r * t + p) * d..(r * t + p + 1) * d];
                    for (a, v) in acc.iter_mut().zip(row) {
                        *a += v;
                    }
                }
            }
            for a in acc.iter_mut() {
                *a /= count as f64;
            }
        }
        let shape = if tx.shape().len() == 2 {
            vec![d]
        } else {
            vec![b, d]
        };
        let value = Tensor::new(shape, out)?;
        let rg = self.rg(x);
        Ok(self.push(
            value,
            Op::MeanPool {
                x,
                mask: mask.to_vec(),
                counts,
            },
            rg,
        ))
    }

    /// Maximum over valid positions, shaped like [`Graph::mean_pool`].
    /// The gradient goes to the first position holding the maximum.
    pub fn max_pool(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let tx = self.value(x);
        let (b, t, d) = pool_dims("max_pool", tx.shape(), mask.len())?;
        let mut out = vec![f64::NEG_INFINITY; b * d];
        let mut argmax = vec![usize::MAX; b * d];
        for r in 0..b {
            if !mask[r * t..(r + 1) * t].iter().any(|&m| m) {
                return Err(Error::EmptySequence("max_pool"));
            }
            for p in 0..t {
                if !mask[r * t + p] {
                    continue;
                }
                let base = (r * t + p) * d;
                for j in 0..d {
                    let v = tx.data()[base + j];
                    if argmax[r * d + j] == usize::MAX || v > out[r * d + j] {
                        out[r * d + j] = v;
                        argmax[r * d + j] = base + j;
                    }
                }
            }
        }
        let shape = if tx.shape().len() == 2 {
            vec![d]
        } else {
            vec![b, d]
        };
        let value = Tensor::new(shape, out)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::MaxPool { x, argmax }, rg))
    }

    /// Concatenation along the last axis.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.is_empty() || sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(shape_err("concat", sa, sb));
        }
        let (da, db) = (ta.last_dim(), tb.last_dim());
        let rows: usize = sa[..sa.len() - 1].iter().product();
        let mut data = Vec::with_capacity(rows * (da + db));
        for r in 0..rows {
            data.extend_from_slice(&ta.data()[r * da..(r + 1) * da]);
            data.extend_from_slice(&tb.data()[r * db..(r + 1) * db]);
        }
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = da + db;
        let value = Tensor::new(shape, data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Concat { a, b }, rg))
    }

    /// Inverted dropout. Outside training, or with `p == 0`, returns `x` itself.
    pub fn dropout(&mut self, x: Var, p: f64, training: bool, rng: &mut impl Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::invalid(format!(
                "dropout probability {p} outside [0, 1)"
            )));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let tx = self.value(x);
        let multipliers: Vec<f64> = (0..tx.len())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let data = tx
            .data()
            .iter()
            .zip(&multipliers)
            .map(|(v, m)| v * m)
            .collect();
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Dropout { x, multipliers }, rg))
    }

    /// Mean negative log-likelihood of `labels` under a row softmax of
    /// `[batch, classes]` logits.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let tl = self.value(logits);
        let &[batch, classes] = tl.shape() else {
            return Err(shape_err(
                "softmax_cross_entropy",
                tl.shape(),
                &[labels.len()],
            ));
        };
        if batch == 0 || batch != labels.len() {
            return Err(shape_err(
                "softmax_cross_entropy",
                tl.shape(),
                &[labels.len()],
            ));
        }
        let mut probs = vec![0.0; batch * classes];
        let mut loss = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            if label >= classes {
                return Err(Error::Index {
                    what: "class labels",
                    index: label,
                    bound: classes,
                });
            }
            let row = &tl.data()[r * classes..(r + 1) * classes];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let log_total = total.ln();
            for (j, v) in row.iter().enumerate() {
                probs[r * classes + j] = (v - max - log_total).exp();
            }
            loss -= row[label] - max - log_total;
        }
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss / batch as f64),
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                labels: labels.to_vec(),
            },
            rg,
        ))
    }
}

/// Gradient buffer of `v`, created on first use; `None` for nodes that do
/// not require gradients.
fn slot<'a>(grads: &'a mut [Option<Tensor>], nodes: &[Node], v: Var) -> Option<&'a mut [f64]> {
    let node = &nodes[v.0];
    if !node.requires_grad {
        return None;
    }
    Some(
        grads[v.0]
            .get_or_insert_with(|| Tensor::zeros(node.value.shape().to_vec()))
            .data_mut(),
    )
}

impl Graph {
    /// Reverse-mode sweep from a single-element `loss`. Replaces gradients
    /// from any previous sweep; a node used several times accumulates the
    /// sum of its consumers' contributions.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let loss_value = self.value(loss);
        if loss_value.len() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_value.shape()
            )));
        }
        let Graph {
            nodes,
            grads,
            fault,
        } = self;
        let nodes = &*nodes;
        grads.clear();
        grads.resize_with(nodes.len(), || None);
        if !nodes[loss.0].requires_grad {
            return Ok(());
        }
        grads[loss.0] = Some(Tensor::full(loss_value_shape(nodes, loss), 1.0));

        for i in (0..=loss.0).rev() {
            let Some(gout) = grads[i].take() else {
                continue;
            };
            let g = gout.data();
            match &nodes[i].op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        if let Some(dx) = slot(grads, nodes, v) {
                            dx.iter_mut().zip(g).for_each(|(d, g)| *d += g);
                        }
                    }
                }
                Op::AddBias(x, b) => {
                    if let Some(dx) = slot(grads, nodes, *x) {
                        dx.iter_mut().zip(g).for_each(|(d, g)| *d += g);
                    }
                    if let Some(db) = slot(grads, nodes, *b) {
                        let d = db.len();
                        if d > 0 {
                            for row in g.chunks_exact(d) {
                                db.iter_mut().zip(row).for_each(|(d, g)| *d += g);
                            }
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    let av = nodes[a.0].value.data();
                    let bv = nodes[b.0].value.data();
                    if let Some(da) = slot(grads, nodes, a) {
                        for ((d, g), y) in da.iter_mut().zip(g).zip(bv) {
                            *d += g * y;
                        }
                    }
                    if let Some(db) = slot(grads, nodes, b) {
                        for ((d, g), x) in db.iter_mut().zip(g).zip(av) {
                            *d += g * x;
                        }
                    }
                }
                Op::Scale(x, c) => {
                    let c = *c;
                    if let Some(dx) = slot(grads, nodes, *x) {
                        dx.iter_mut().zip(g).for_each(|(d, g)| *d += c * g);
                    }
                }
                Op::Sum(x) => {
                    let g0 = g[0];
                    if let Some(dx) = slot(grads, nodes, *x) {
                        dx.iter_mut().for_each(|d| *d += g0);
                    }
                }
                Op::MatMul(a, b) => {
                    let (a, b) = (*a, *b);
                    let (sa, sb) = (nodes[a.0].value.shape(), nodes[b.0].value.shape());
                    let (batch, m, k, n) = match (sa, sb) {
                        (&[m, k], &[_, n]) => (1, m, k, n),
                        (&[bt, m, k], &[_, _, n]) => (bt, m, k, n),
                        _ => unreachable!("matmul shapes validated on forward"),
                    };
                    if nodes[a.0].requires_grad {
                        let bv = nodes[b.0].value.data();
                        let da = slot(grads, nodes, a).unwrap();
                        for t in 0..batch {
                            gemm(
                                m,
                                n,
                                k,
                                &g[t * m * n..(t + 1) * m * n],
                                false,
                                &bv[t * k * n..(t + 1) * k * n],
                                true,
                                &mut da[t * m * k..(t + 1) * m * k],
                                true,
                            );
                        }
                    }
                    if nodes[b.0].requires_grad {
                        let av = nodes[a.0].value.data();
                        let db = slot(grads, nodes, b).unwrap();
                        for t in 0..batch {
                            gemm(
                                k,
                                m,
                                n,
                                &av[t * m * k..(t + 1) * m * k],
                                true,
                                &g[t * m * n..(t + 1) * m * n],
                                false,
                                &mut db[t * k * n..(t + 1) * k * n],
                                true,
                            );
                        }
                    }
                }
                Op::Relu(x) => {
                    let x = *x;
                    let xv = nodes[x.0].value.data();
                    let corrupt = *fault == Some(Fault::ReluBackward);
                    if let Some(dx) = slot(grads, nodes, x) {
                        for ((d, g), v) in dx.iter_mut().zip(g).zip(xv) {
                            if *v > 0.0 || corrupt {
                                *d += g;
                            }
                        }
                    }
                }
                Op::Reshape(x) => {
                    if let Some(dx) = slot(grads, nodes, *x) {
                        dx.iter_mut().zip(g).for_each(|(d, g)| *d += g);
                    }
                }
                Op::Permute { x, offsets } => {
                    let x = *x;
                    if let Some(dx) = slot(grads, nodes, x) {
                        for (o, g) in offsets.iter().zip(g) {
                            dx[*o] += g;
                        }
                    }
                }
                Op::Embedding { table, ids } => {
                    let table = *table;
                    if let Some(dt) = slot(grads, nodes, table) {
                        let d = if ids.is_empty() {
                            0
                        } else {
                            g.len() / ids.len()
                        };
                        for (r, &id) in ids.iter().enumerate() {
                            let row = &g[r * d..(r + 1) * d];
                            dt[id * d..(id + 1) * d]
                                .iter_mut()
                                .zip(row)
                                .for_each(|(a, g)| *a += g);
                        }
                    }
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let (x, gain, bias) = (*x, *gain, *bias);
                    let gv = nodes[gain.0].value.data();
                    let d = gv.len();
                    if let Some(dg) = slot(grads, nodes, gain) {
                        for (gr, hr) in g.chunks_exact(d).zip(xhat.chunks_exact(d)) {
                            for j in 0..d {
                                dg[j] += gr[j] * hr[j];
                            }
                        }
                    }
                    if let Some(db) = slot(grads, nodes, bias) {
                        for gr in g.chunks_exact(d) {
                            db.iter_mut().zip(gr).for_each(|(a, g)| *a += g);
                        }
                    }
                    if let Some(dx) = slot(grads, nodes, x) {
                        let mut dxhat = vec![0.0; d];
                        for (r, (gr, hr)) in g.chunks_exact(d).zip(xhat.chunks_exact(d)).enumerate()
                        {
                            let mut s1 = 0.0;
                            let mut s2 = 0.0;
                            for j in 0..d {
                                dxhat[j] = gr[j] * gv[j];
                                s1 += dxhat[j];
                                s2 += dxhat[j] * hr[j];
                            }
                            let scale = inv_std[r] / d as f64;
                            for j in 0..d {
                                dx[r * d + j] += scale * (d as f64 * dxhat[j] - s1 - hr[j] * s2);
                            }
                        }
                    }
                }
                Op::MaskedSoftmax(x) => {
                    let x = *x;
                    let y = nodes[i].value.data();
                    let tk = nodes[i].value.last_dim();
                    if let Some(dx) = slot(grads, nodes, x) {
                        for ((dr, gr), yr) in dx
                            .chunks_exact_mut(tk)
                            .zip(g.chunks_exact(tk))
                            .zip(y.chunks_exact(tk))
                        {
                            let dot: f64 = gr.iter().zip(yr).map(|(g, y)| g * y).sum();
                            for j in 0..tk {
                                dr[j] += yr[j] * (gr[j] - dot);
                            }
                        }
                    }
                }
                Op::MeanPool { x, mask, counts } => {
                    let x = *x;
                    let b = counts.len();
                    let t = mask.len() / b;
                    let d = g.len() / b;
                    if let Some(dx) = slot(grads, nodes, x) {
                        for r in 0..b {
                            let inv = 1.0 / counts[r] as f64;
                            for p in 0..t {
                                if mask[r * t + p] {
                                    let base = (r * t + p) * d;
                                    for j in 0..d {
                                        dx[base + j] += g[r * d + j] * inv;
                                    }
                                }
                            }
                        }
                    }
                }
                Op::MaxPool { x, argmax } => {
                    let x = *x;
                    if let Some(dx) = slot(grads, nodes, x) {
                        for (k, &o) in argmax.iter().enumerate() {
                            dx[o] += g[k];
                        }
                    }
                }
                Op::Concat { a, b } => {
                    let (a, b) = (*a, *b);
                    let da_w = nodes[a.0].value.last_dim();
                    let db_w = nodes[b.0].value.last_dim();
                    let w = da_w + db_w;
                    let rows = g.len().checked_div(w).unwrap_or(0);
                    if let Some(da) = slot(grads, nodes, a) {
                        for r in 0..rows {
                            for j in 0..da_w {
                                da[r * da_w + j] += g[r * w + j];
                            }
                        }
                    }
                    if let Some(db) = slot(grads, nodes, b) {
                        for r in 0..rows {
                            for j in 0..db_w {
                                db[r * db_w + j] += g[r * w + da_w + j];
                            }
                        }
                    }
                }
                Op::Dropout { x, multipliers } => {
                    let x = *x;
                    let m = multipliers;
                    if let Some(dx) = slot(grads, nodes, x) {
                        for ((d, g), m) in dx.iter_mut().zip(g).zip(m) {
                            *d += g * m;
                        }
                    }
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    probs,
                    labels,
                } => {
                    let logits = *logits;
                    let batch = labels.len();
                    let classes = probs.len() / batch;
                    let scale = g[0] / batch as f64;
                    if let Some(dl) = slot(grads, nodes, logits) {
                        for (r, &label) in labels.iter().enumerate() {
                            for c in 0..classes {
                                let onehot = if c == label { 1.0 } else { 0.0 };
                                dl[r * classes + c] += scale * (probs[r * classes + c] - onehot);
                            }
                        }
                    }
                }
            }
            grads[i] = Some(gout);
        }
        Ok(())
    }
}

fn loss_value_shape(nodes: &[Node], v: Var) -> Vec<usize> {
    nodes[v.0].value.shape().to_vec()
}
