//! Tape of forward operations and their reverse-mode adjoints.
//!
//! Every value is a row-major matrix (`rows × cols`); vectors are `1 × n` or `[n]`.
//! Nodes are appended in execution order, so walking the tape backwards visits
//! each node after all of its consumers.

use crate::error::{contract, shape_err, NnError, Result};
use crate::params::{ParamId, ParameterStore};
use crate::scalar::Scalar;
use crate::tensor::{gemm, MatMut, MatRef, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// Sliding-window geometry for a 2-D convolution over an `h × w × c` input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dGeometry {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
}

impl Conv2dGeometry {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.ph - self.kh) / self.sh + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pw - self.kw) / self.sw + 1
    }

    pub fn patch_len(&self) -> usize {
        self.kh * self.kw * self.c
    }
}

enum Op<T> {
    Input,
    Param(ParamId),
    MatMul { a: NodeId, b: NodeId },
    Linear { x: NodeId, w: NodeId, b: Option<NodeId> },
    Add { a: NodeId, b: NodeId },
    AddRow { a: NodeId, row: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { a: NodeId, factor: T },
    Relu { a: NodeId },
    Sigmoid { a: NodeId },
    Swish { a: NodeId, sig: Vec<T> },
    LayerNorm { x: NodeId, gamma: NodeId, beta: NodeId, xhat: Vec<T>, rstd: Vec<T> },
    Softmax { a: NodeId },
    Attention { q: NodeId, k: NodeId, v: NodeId, heads: usize, probs: Vec<T> },
    SliceCols { a: NodeId, start: usize },
    Unfold1d { x: NodeId, kernel: usize, stride: usize, pad: usize },
    DepthwiseConv1d { x: NodeId, w: NodeId, b: NodeId },
    Im2Col { x: NodeId, geom: Conv2dGeometry },
    Reshape { a: NodeId },
    Embedding { table: NodeId, ids: Vec<usize> },
    MaskRows { a: NodeId, valid: usize },
    SumAll { a: NodeId },
    Loss { inputs: Vec<(NodeId, Vec<T>)> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Per-parameter gradients from one backward pass, indexed by [`ParamId`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn empty(len: usize) -> Self {
        Self { grads: vec![None; len] }
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn get(&self, id: ParamId) -> Option<&[T]> {
        self.grads[id.index()].as_deref()
    }

    pub fn iter(&self) -> impl Iterator<Item = Option<&Vec<T>>> {
        self.grads.iter().map(|g| g.as_ref())
    }

    /// Element-wise sum, in place.
    pub fn add(&mut self, other: &Gradients<T>) {
        for (mine, theirs) in self.grads.iter_mut().zip(&other.grads) {
            match (mine.as_mut(), theirs) {
                (_, None) => {}
                (None, Some(t)) => *mine = Some(t.clone()),
                (Some(m), Some(t)) => {
                    for (x, &y) in m.iter_mut().zip(t) {
                        *x += y;
                    }
                }
            }
        }
    }
}

/// A recorded computation reading parameters from one store.
pub struct Graph<'s, T: Scalar> {
    store: &'s ParameterStore<T>,
    nodes: Vec<Node<T>>,
    param_nodes: Vec<Option<NodeId>>,
}

fn row_slice<T>(data: &[T], cols: usize, r: usize) -> &[T] {
    &data[r * cols..(r + 1) * cols]
}

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// In-place numerically stable softmax over the entries of `row` flagged valid.
fn softmax_masked<T: Scalar>(row: &mut [T], valid: Option<&[bool]>) {
    let is_valid = |j: usize| valid.map_or(true, |m| m[j]);
    let mut max = T::neg_infinity();
    for (j, &x) in row.iter().enumerate() {
        if is_valid(j) && x > max {
            max = x;
        }
    }
    let mut sum = T::zero();
    for (j, x) in row.iter_mut().enumerate() {
        if is_valid(j) {
            *x = (*x - max).exp();
            sum += *x;
        } else {
            *x = T::zero();
        }
    }
    let inv = T::one() / sum;
    for x in row.iter_mut() {
        *x *= inv;
    }
}

impl<'s, T: Scalar> Graph<'s, T> {
    pub fn new(store: &'s ParameterStore<T>) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_nodes: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &'s ParameterStore<T> {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[NodeId]) -> NodeId {
        let requires_grad = match &op {
            Op::Input => false,
            Op::Param(id) => self.store.get(*id).trainable,
            _ => inputs.iter().any(|i| self.nodes[i.0].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// A constant leaf; never receives a gradient.
    pub fn input(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Input, &[])
    }

    /// The leaf for a stored parameter, created on first use.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(node) = self.param_nodes[id.index()] {
            return node;
        }
        let value = self.store.value(id).clone();
        let node = self.push(value, Op::Param(id), &[]);
        self.param_nodes[id.index()] = Some(node);
        node
    }

    pub fn param_named(&mut self, name: &str) -> Result<NodeId> {
        let id = self.store.id(name)?;
        Ok(self.param(id))
    }

    fn dims(&self, id: NodeId) -> (usize, usize) {
        let v = &self.nodes[id.0].value;
        (v.rows(), v.cols())
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let ((m, k), (k2, n)) = (self.dims(a), self.dims(b));
        if k != k2 {
            return Err(shape_err("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = Tensor::zeros(&[m, n]);
        gemm(T::one(), self.value(a).view(), self.value(b).view(), T::zero(), out.view_mut());
        Ok(self.push(out, Op::MatMul { a, b }, &[a, b]))
    }

    /// `x·W + b` with `W` stored as `in × out`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let ((n, i), (i2, o)) = (self.dims(x), self.dims(w));
        if i != i2 {
            return Err(shape_err("linear", self.shape(x), self.shape(w)));
        }
        let mut out = Tensor::zeros(&[n, o]);
        if let Some(b) = b {
            let bias = self.value(b);
            if bias.len() != o {
                return Err(shape_err("linear bias", self.shape(w), bias.shape()));
            }
            for r in 0..n {
                out.data_mut()[r * o..(r + 1) * o].copy_from_slice(bias.data());
            }
        }
        let beta = if b.is_some() { T::one() } else { T::zero() };
        gemm(T::one(), self.value(x).view(), self.value(w).view(), beta, out.view_mut());
        let inputs: Vec<NodeId> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(out, Op::Linear { x, w, b }, &inputs))
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        let out = Tensor::from_vec(
            self.shape(a),
            self.value(a)
                .data()
                .iter()
                .zip(self.value(b).data())
                .map(|(&x, &y)| x + y)
                .collect(),
        )?;
        Ok(self.push(out, Op::Add { a, b }, &[a, b]))
    }

    /// Adds a length-`cols` vector to every row.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let cols = self.dims(a).1;
        if self.value(row).len() != cols {
            return Err(shape_err("add_row", self.shape(a), self.shape(row)));
        }
        let r = self.value(row).data().to_vec();
        let mut out = self.value(a).clone();
        for chunk in out.data_mut().chunks_mut(cols) {
            for (x, &y) in chunk.iter_mut().zip(&r) {
                *x += y;
            }
        }
        Ok(self.push(out, Op::AddRow { a, row }, &[a, row]))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mul", a, b)?;
        let out = Tensor::from_vec(
            self.shape(a),
            self.value(a)
                .data()
                .iter()
                .zip(self.value(b).data())
                .map(|(&x, &y)| x * y)
                .collect(),
        )?;
        Ok(self.push(out, Op::Mul { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let factor = T::of(factor);
        let out = self.value(a).map(|x| x * factor);
        self.push(out, Op::Scale { a, factor }, &[a])
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        self.push(out, Op::Relu { a }, &[a])
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid { a }, &[a])
    }

    /// `x·σ(x)`.
    pub fn swish(&mut self, a: NodeId) -> NodeId {
        let sig: Vec<T> = self.value(a).data().iter().map(|&x| sigmoid(x)).collect();
        let data = self.value(a).data().iter().zip(&sig).map(|(&x, &s)| x * s).collect();
        let out = Tensor::from_vec(self.shape(a), data).expect("same shape");
        self.push(out, Op::Swish { a, sig }, &[a])
    }

    /// Row-wise normalization to zero mean and unit variance, then `γ·x̂ + β`.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> Result<NodeId> {
        let (n, d) = self.dims(x);
        if self.value(gamma).len() != d || self.value(beta).len() != d {
            return Err(shape_err("layer_norm", self.shape(x), self.shape(gamma)));
        }
        let eps = T::of(eps);
        let inv_d = T::one() / T::of(d as f64);
        let xs = self.value(x).data();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![T::zero(); n * d];
        let mut rstd = vec![T::zero(); n];
        let mut out = vec![T::zero(); n * d];
        for r in 0..n {
            let row = row_slice(xs, d, r);
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for c in 0..d {
                let h = (row[c] - mean) * rs;
                xhat[r * d + c] = h;
                out[r * d + c] = h * g[c] + b[c];
            }
        }
        let out = Tensor::from_vec(self.shape(x), out)?;
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            &[x, gamma, beta],
        ))
    }

    /// Softmax over each row.
    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let cols = self.dims(a).1;
        let mut out = self.value(a).clone();
        for row in out.data_mut().chunks_mut(cols) {
            softmax_masked(row, None);
        }
        self.push(out, Op::Softmax { a }, &[a])
    }

    /// Multi-head scaled dot-product attention, `softmax(QKᵀ/√d_h)·V` per head.
    ///
    /// `key_mask[j] == false` excludes key/value row `j`. The column dimension is
    /// split evenly into `heads` blocks of width `d_h`.
    pub fn attention(
        &mut self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        heads: usize,
        key_mask: Option<&[bool]>,
    ) -> Result<NodeId> {
        let ((n, d), (m, dk), (mv, dv)) = (self.dims(q), self.dims(k), self.dims(v));
        if d != dk || m != mv || d != dv {
            return Err(shape_err("attention", self.shape(q), self.shape(k)));
        }
        if heads == 0 || d % heads != 0 {
            return Err(contract("attention", format!("width {d} not divisible into {heads} heads")));
        }
        if let Some(mask) = key_mask {
            if mask.len() != m {
                return Err(shape_err("attention mask", &[m], &[mask.len()]));
            }
        }
        if m == 0 || key_mask.is_some_and(|mask| !mask.iter().any(|&x| x)) {
            return Err(contract("attention", "every key position is masked"));
        }
        let dh = d / heads;
        let scale = T::of(1.0 / (dh as f64).sqrt());
        let mut probs = vec![T::zero(); heads * n * m];
        let mut out = Tensor::zeros(&[n, d]);
        {
            let (qv, kv, vv) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
            for h in 0..heads {
                let p = &mut probs[h * n * m..(h + 1) * n * m];
                gemm(
                    scale,
                    MatRef::col_block(qv, n, d, h * dh, dh),
                    MatRef::col_block(kv, m, d, h * dh, dh).t(),
                    T::zero(),
                    MatMut::new(p, n, m),
                );
                for row in p.chunks_mut(m) {
                    softmax_masked(row, key_mask);
                }
                gemm(
                    T::one(),
                    MatRef::new(p, n, m),
                    MatRef::col_block(vv, m, d, h * dh, dh),
                    T::zero(),
                    MatMut::col_block(out.data_mut(), n, d, h * dh, dh),
                );
            }
        }
        Ok(self.push(out, Op::Attention { q, k, v, heads, probs }, &[q, k, v]))
    }

    /// Attention weights of the most recent [`Graph::attention`] node, `heads × n × m`.
    pub fn attention_weights(&self, node: NodeId) -> Option<&[T]> {
        match &self.nodes[node.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (n, d) = self.dims(a);
        if start + len > d {
            return Err(contract("slice_cols", format!("columns {start}..{} of {d}", start + len)));
        }
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(n * len);
        for r in 0..n {
            out.extend_from_slice(&src[r * d + start..r * d + start + len]);
        }
        let out = Tensor::from_vec(&[n, len], out)?;
        Ok(self.push(out, Op::SliceCols { a, start }, &[a]))
    }

    /// Stacks `kernel` neighbouring rows (zero-padded by `pad`, hop `stride`) into one row.
    pub fn unfold1d(&mut self, x: NodeId, kernel: usize, stride: usize, pad: usize) -> Result<NodeId> {
        let (t, c) = self.dims(x);
        if kernel == 0 || stride == 0 || t + 2 * pad < kernel {
            return Err(contract("unfold1d", format!("kernel {kernel}, stride {stride}, pad {pad}, length {t}")));
        }
        let t_out = (t + 2 * pad - kernel) / stride + 1;
        let src = self.value(x).data();
        let mut out = vec![T::zero(); t_out * kernel * c];
        for o in 0..t_out {
            for k in 0..kernel {
                let s = (o * stride + k) as isize - pad as isize;
                if s >= 0 && (s as usize) < t {
                    let s = s as usize;
                    out[(o * kernel + k) * c..(o * kernel + k + 1) * c].copy_from_slice(&src[s * c..(s + 1) * c]);
                }
            }
        }
        let out = Tensor::from_vec(&[t_out, kernel * c], out)?;
        Ok(self.push(out, Op::Unfold1d { x, kernel, stride, pad }, &[x]))
    }

    /// Per-channel convolution along rows with "same" zero padding; `w` is `kernel × channels`.
    pub fn depthwise_conv1d(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let ((t, c), (kernel, cw)) = (self.dims(x), self.dims(w));
        if c != cw || self.value(b).len() != c || kernel % 2 == 0 {
            return Err(shape_err("depthwise_conv1d", self.shape(x), self.shape(w)));
        }
        let half = (kernel / 2) as isize;
        let (xs, ws, bs) = (self.value(x).data(), self.value(w).data(), self.value(b).data());
        let mut out = vec![T::zero(); t * c];
        for r in 0..t {
            let dst = &mut out[r * c..(r + 1) * c];
            dst.copy_from_slice(bs);
            for k in 0..kernel {
                let s = r as isize + k as isize - half;
                if s < 0 || s >= t as isize {
                    continue;
                }
                let src = row_slice(xs, c, s as usize);
                let wk = row_slice(ws, c, k);
                for ch in 0..c {
                    dst[ch] += wk[ch] * src[ch];
                }
            }
        }
        let out = Tensor::from_vec(&[t, c], out)?;
        Ok(self.push(out, Op::DepthwiseConv1d { x, w, b }, &[x, w, b]))
    }

    /// Extracts convolution patches: output row `i'·W' + j'` holds the `kh × kw × c` window.
    pub fn im2col(&mut self, x: NodeId, geom: Conv2dGeometry) -> Result<NodeId> {
        let (h, wc) = self.dims(x);
        if h != geom.h || wc != geom.w * geom.c || geom.h + 2 * geom.ph < geom.kh || geom.w + 2 * geom.pw < geom.kw {
            return Err(contract("im2col", format!("input {h}×{wc} does not fit {geom:?}")));
        }
        let (oh, ow, patch) = (geom.out_h(), geom.out_w(), geom.patch_len());
        let src = self.value(x).data();
        let mut out = vec![T::zero(); oh * ow * patch];
        for i in 0..oh {
            for j in 0..ow {
                let row = &mut out[(i * ow + j) * patch..(i * ow + j + 1) * patch];
                for a in 0..geom.kh {
                    let si = (i * geom.sh + a) as isize - geom.ph as isize;
                    if si < 0 || si >= geom.h as isize {
                        continue;
                    }
                    for b in 0..geom.kw {
                        let sj = (j * geom.sw + b) as isize - geom.pw as isize;
                        if sj < 0 || sj >= geom.w as isize {
                            continue;
                        }
                        let from = (si as usize * geom.w + sj as usize) * geom.c;
                        let to = (a * geom.kw + b) * geom.c;
                        row[to..to + geom.c].copy_from_slice(&src[from..from + geom.c]);
                    }
                }
            }
        }
        let out = Tensor::from_vec(&[oh * ow, patch], out)?;
        Ok(self.push(out, Op::Im2Col { x, geom }, &[x]))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let out = self.value(a).clone().reshaped(shape)?;
        Ok(self.push(out, Op::Reshape { a }, &[a]))
    }

    /// Rows of `table` selected by `ids`.
    pub fn embedding(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let (v, d) = self.dims(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(contract("embedding", format!("id {bad} out of range for table of {v} rows")));
        }
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(row_slice(src, d, i));
        }
        let out = Tensor::from_vec(&[ids.len(), d], out)?;
        Ok(self.push(
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    /// Zeroes rows at index `valid` and beyond (masked padding).
    pub fn mask_rows(&mut self, a: NodeId, valid: usize) -> NodeId {
        let (n, d) = self.dims(a);
        if valid >= n {
            return a;
        }
        let mut out = self.value(a).clone();
        for x in &mut out.data_mut()[valid * d..] {
            *x = T::zero();
        }
        self.push(out, Op::MaskRows { a, valid }, &[a])
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let total = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(total), Op::SumAll { a }, &[a])
    }

    /// Scalar loss computed outside the graph, with its gradient with respect to
    /// each input supplied up front.
    pub fn external_loss(&mut self, value: T, inputs: Vec<(NodeId, Vec<T>)>) -> Result<NodeId> {
        for (id, grad) in &inputs {
            if grad.len() != self.value(*id).len() {
                return Err(shape_err("external_loss", self.shape(*id), &[grad.len()]));
            }
        }
        let ids: Vec<NodeId> = inputs.iter().map(|(id, _)| *id).collect();
        Ok(self.push(Tensor::scalar(value), Op::Loss { inputs }, &ids))
    }

    /// Summed cross entropy of row-wise softmax(logits) against class targets;
    /// rows with a `None` target are skipped.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[Option<usize>]) -> Result<NodeId> {
        let (n, classes) = self.dims(logits);
        if targets.len() != n {
            return Err(shape_err("cross_entropy", self.shape(logits), &[targets.len()]));
        }
        if let Some(bad) = targets.iter().flatten().find(|&&t| t >= classes) {
            return Err(contract("cross_entropy", format!("target {bad} out of range for {classes} classes")));
        }
        let data = self.value(logits).data();
        let mut grad = data.to_vec();
        let mut value = 0.0f64;
        for (r, target) in targets.iter().enumerate() {
            let row = &mut grad[r * classes..(r + 1) * classes];
            match target {
                None => row.iter_mut().for_each(|x| *x = T::zero()),
                Some(t) => {
                    let logits = row_slice(data, classes, r);
                    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x.as_f64()));
                    let lse = max + logits.iter().map(|&x| (x.as_f64() - max).exp()).sum::<f64>().ln();
                    value += lse - logits[*t].as_f64();
                    softmax_masked(row, None);
                    row[*t] -= T::one();
                }
            }
        }
        self.external_loss(T::of(value), vec![(logits, grad)])
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        if loss.0 >= self.nodes.len() {
            return Err(NnError::State("backward called on a node this graph never recorded".into()));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(NnError::State(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }

        // Every trainable parameter gets a slot; ones the loss never touched are exactly zero.
        let mut out = Gradients::empty(self.store.len());
        for (id, p) in self.store.iter() {
            if !p.trainable {
                continue;
            }
            let grad = self.param_nodes[id.index()].and_then(|node| grads[node.0].take());
            out.grads[id.index()] = Some(grad.unwrap_or_else(|| vec![T::zero(); p.value.len()]));
        }
        Ok(out)
    }

    fn backprop_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        let nodes = &self.nodes;
        // Gradient buffer of an input, or None when that input needs no gradient.
        macro_rules! slot {
            ($id:expr) => {{
                let id: NodeId = $id;
                if nodes[id.0].requires_grad {
                    Some(grads[id.0].get_or_insert_with(|| vec![T::zero(); nodes[id.0].value.len()]))
                } else {
                    None
                }
            }};
        }
        let val = |id: NodeId| &nodes[id.0].value;
        let (rows, cols) = (node.value.rows(), node.value.cols());

        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::MatMul { a, b } => {
                let (m, k) = (val(*a).rows(), val(*a).cols());
                let n = val(*b).cols();
                let gv = MatRef::new(g, m, n);
                let bv = val(*b).view();
                let av = val(*a).view();
                if let Some(ga) = slot!(*a) {
                    gemm(T::one(), gv, bv.t(), T::one(), MatMut::new(ga, m, k));
                }
                if let Some(gb) = slot!(*b) {
                    gemm(T::one(), av.t(), gv, T::one(), MatMut::new(gb, k, n));
                }
            }
            Op::Linear { x, w, b } => {
                let (n, inp) = (val(*x).rows(), val(*x).cols());
                let o = val(*w).cols();
                let gv = MatRef::new(g, n, o);
                if let Some(gx) = slot!(*x) {
                    gemm(T::one(), gv, val(*w).view().t(), T::one(), MatMut::new(gx, n, inp));
                }
                if let Some(gw) = slot!(*w) {
                    gemm(T::one(), val(*x).view().t(), gv, T::one(), MatMut::new(gw, inp, o));
                }
                if let Some(b) = b {
                    if let Some(gb) = slot!(*b) {
                        for r in 0..n {
                            for (acc, &x) in gb.iter_mut().zip(row_slice(g, o, r)) {
                                *acc += x;
                            }
                        }
                    }
                }
            }
            Op::Add { a, b } => {
                for id in [*a, *b] {
                    if let Some(s) = slot!(id) {
                        s.iter_mut().zip(g).for_each(|(x, &y)| *x += y);
                    }
                }
            }
            Op::AddRow { a, row } => {
                if let Some(s) = slot!(*a) {
                    s.iter_mut().zip(g).for_each(|(x, &y)| *x += y);
                }
                if let Some(s) = slot!(*row) {
                    for chunk in g.chunks(cols) {
                        s.iter_mut().zip(chunk).for_each(|(x, &y)| *x += y);
                    }
                }
            }
            Op::Mul { a, b } => {
                let (av, bv) = (val(*a).data(), val(*b).data());
                if let Some(s) = slot!(*a) {
                    for ((x, &gy), &other) in s.iter_mut().zip(g).zip(bv) {
                        *x += gy * other;
                    }
                }
                if let Some(s) = slot!(*b) {
                    for ((x, &gy), &other) in s.iter_mut().zip(g).zip(av) {
                        *x += gy * other;
                    }
                }
            }
            Op::Scale { a, factor } => {
                if let Some(s) = slot!(*a) {
                    s.iter_mut().zip(g).for_each(|(x, &y)| *x += y * *factor);
                }
            }
            Op::Relu { a } => {
                if let Some(s) = slot!(*a) {
                    for ((x, &gy), &inp) in s.iter_mut().zip(g).zip(val(*a).data()) {
                        if inp > T::zero() {
                            *x += gy;
                        }
                    }
                }
            }
            Op::Sigmoid { a } => {
                if let Some(s) = slot!(*a) {
                    for ((x, &gy), &y) in s.iter_mut().zip(g).zip(node.value.data()) {
                        *x += gy * y * (T::one() - y);
                    }
                }
            }
            Op::Swish { a, sig } => {
                if let Some(s) = slot!(*a) {
                    for (((x, &gy), &inp), &sg) in s.iter_mut().zip(g).zip(val(*a).data()).zip(sig) {
                        *x += gy * (sg + inp * sg * (T::one() - sg));
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let d = cols;
                let gam = val(*gamma).data();
                if let Some(gg) = slot!(*gamma) {
                    for r in 0..rows {
                        for c in 0..d {
                            gg[c] += g[r * d + c] * xhat[r * d + c];
                        }
                    }
                }
                if let Some(gb) = slot!(*beta) {
                    for r in 0..rows {
                        for c in 0..d {
                            gb[c] += g[r * d + c];
                        }
                    }
                }
                if let Some(gx) = slot!(*x) {
                    let inv_d = T::one() / T::of(d as f64);
                    let mut dxhat = vec![T::zero(); d];
                    for r in 0..rows {
                        let mut mean_dxhat = T::zero();
                        let mut mean_dxhat_xhat = T::zero();
                        for c in 0..d {
                            dxhat[c] = g[r * d + c] * gam[c];
                            mean_dxhat += dxhat[c];
                            mean_dxhat_xhat += dxhat[c] * xhat[r * d + c];
                        }
                        mean_dxhat *= inv_d;
                        mean_dxhat_xhat *= inv_d;
                        for c in 0..d {
                            gx[r * d + c] += rstd[r] * (dxhat[c] - mean_dxhat - xhat[r * d + c] * mean_dxhat_xhat);
                        }
                    }
                }
            }
            Op::Softmax { a } => {
                if let Some(s) = slot!(*a) {
                    let y = node.value.data();
                    for r in 0..rows {
                        let (yr, gr) = (row_slice(y, cols, r), row_slice(g, cols, r));
                        let dot: T = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                        for c in 0..cols {
                            s[r * cols + c] += yr[c] * (gr[c] - dot);
                        }
                    }
                }
            }
            Op::Attention { q, k, v, heads, probs } => {
                let (n, d) = (val(*q).rows(), val(*q).cols());
                let m = val(*k).rows();
                let dh = d / heads;
                let scale = T::of(1.0 / (dh as f64).sqrt());
                let (qv, kv, vv) = (val(*q).data(), val(*k).data(), val(*v).data());
                let mut dq = vec![T::zero(); n * d];
                let mut dk = vec![T::zero(); m * d];
                let mut dv = vec![T::zero(); m * d];
                let mut ds = vec![T::zero(); n * m];
                for h in 0..*heads {
                    let p = &probs[h * n * m..(h + 1) * n * m];
                    let g_h = MatRef::col_block(g, n, d, h * dh, dh);
                    gemm(
                        T::one(),
                        MatRef::new(p, n, m).t(),
                        g_h,
                        T::zero(),
                        MatMut::col_block(&mut dv, m, d, h * dh, dh),
                    );
                    gemm(
                        T::one(),
                        g_h,
                        MatRef::col_block(vv, m, d, h * dh, dh).t(),
                        T::zero(),
                        MatMut::new(&mut ds, n, m),
                    );
                    for r in 0..n {
                        let pr = &p[r * m..(r + 1) * m];
                        let dr = &mut ds[r * m..(r + 1) * m];
                        let dot: T = pr.iter().zip(dr.iter()).map(|(&a, &b)| a * b).sum();
                        for (x, &pj) in dr.iter_mut().zip(pr) {
                            *x = pj * (*x - dot);
                        }
                    }
                    gemm(
                        scale,
                        MatRef::new(&ds, n, m),
                        MatRef::col_block(kv, m, d, h * dh, dh),
                        T::zero(),
                        MatMut::col_block(&mut dq, n, d, h * dh, dh),
                    );
                    gemm(
                        scale,
                        MatRef::new(&ds, n, m).t(),
                        MatRef::col_block(qv, n, d, h * dh, dh),
                        T::zero(),
                        MatMut::col_block(&mut dk, m, d, h * dh, dh),
                    );
                }
                for (id, delta) in [(*q, dq), (*k, dk), (*v, dv)] {
                    if let Some(s) = slot!(id) {
                        s.iter_mut().zip(&delta).for_each(|(x, &y)| *x += y);
                    }
                }
            }
            Op::SliceCols { a, start } => {
                let d = val(*a).cols();
                if let Some(s) = slot!(*a) {
                    for r in 0..rows {
                        for c in 0..cols {
                            s[r * d + start + c] += g[r * cols + c];
                        }
                    }
                }
            }
            Op::Unfold1d { x, kernel, stride, pad } => {
                let (t, c) = (val(*x).rows(), val(*x).cols());
                if let Some(s) = slot!(*x) {
                    for o in 0..rows {
                        for k in 0..*kernel {
                            let src = (o * stride + k) as isize - *pad as isize;
                            if src >= 0 && (src as usize) < t {
                                let src = src as usize;
                                for ch in 0..c {
                                    s[src * c + ch] += g[(o * kernel + k) * c + ch];
                                }
                            }
                        }
                    }
                }
            }
            Op::DepthwiseConv1d { x, w, b } => {
                let (t, c) = (rows, cols);
                let kernel = val(*w).rows();
                let half = (kernel / 2) as isize;
                let (xs, ws) = (val(*x).data(), val(*w).data());
                if let Some(gb) = slot!(*b) {
                    for r in 0..t {
                        for ch in 0..c {
                            gb[ch] += g[r * c + ch];
                        }
                    }
                }
                if let Some(gw) = slot!(*w) {
                    for r in 0..t {
                        for k in 0..kernel {
                            let s = r as isize + k as isize - half;
                            if s < 0 || s >= t as isize {
                                continue;
                            }
                            let s = s as usize;
                            for ch in 0..c {
                                gw[k * c + ch] += g[r * c + ch] * xs[s * c + ch];
                            }
                        }
                    }
                }
                if let Some(gx) = slot!(*x) {
                    for r in 0..t {
                        for k in 0..kernel {
                            let s = r as isize + k as isize - half;
                            if s < 0 || s >= t as isize {
                                continue;
                            }
                            let s = s as usize;
                            for ch in 0..c {
                                gx[s * c + ch] += g[r * c + ch] * ws[k * c + ch];
                            }
                        }
                    }
                }
            }
            Op::Im2Col { x, geom } => {
                if let Some(s) = slot!(*x) {
                    let (oh, ow, patch) = (geom.out_h(), geom.out_w(), geom.patch_len());
                    for i in 0..oh {
                        for j in 0..ow {
                            let row = &g[(i * ow + j) * patch..(i * ow + j + 1) * patch];
                            for a in 0..geom.kh {
                                let si = (i * geom.sh + a) as isize - geom.ph as isize;
                                if si < 0 || si >= geom.h as isize {
                                    continue;
                                }
                                for b in 0..geom.kw {
                                    let sj = (j * geom.sw + b) as isize - geom.pw as isize;
                                    if sj < 0 || sj >= geom.w as isize {
                                        continue;
                                    }
                                    let to = (si as usize * geom.w + sj as usize) * geom.c;
                                    let from = (a * geom.kw + b) * geom.c;
                                    for ch in 0..geom.c {
                                        s[to + ch] += row[from + ch];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::Reshape { a } => {
                if let Some(s) = slot!(*a) {
                    s.iter_mut().zip(g).for_each(|(x, &y)| *x += y);
                }
            }
            Op::Embedding { table, ids } => {
                if let Some(s) = slot!(*table) {
                    for (r, &id) in ids.iter().enumerate() {
                        for c in 0..cols {
                            s[id * cols + c] += g[r * cols + c];
                        }
                    }
                }
            }
            Op::MaskRows { a, valid } => {
                if let Some(s) = slot!(*a) {
                    let end = valid * cols;
                    s[..end].iter_mut().zip(&g[..end]).for_each(|(x, &y)| *x += y);
                }
            }
            Op::SumAll { a } => {
                if let Some(s) = slot!(*a) {
                    s.iter_mut().for_each(|x| *x += g[0]);
                }
            }
            Op::Loss { inputs } => {
                for (id, local) in inputs {
                    if let Some(s) = slot!(*id) {
                        s.iter_mut().zip(local).for_each(|(x, &y)| *x += g[0] * y);
                    }
                }
            }
        }
        Ok(())
    }
}
