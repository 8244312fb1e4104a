use std::borrow::Cow;

use super::kernels::{self, gelu_with_slope, sigmoid_scalar};
use super::{AutodiffError, Tensor};

/// Handle to a node on a [`Graph`] tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv1d { x: Var, w: Var, b: Var, stride: usize },
    InstanceNorm { x: Var, gain: Var, shift: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    LayerNorm { x: Var, gain: Var, shift: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Gelu { x: Var, slope: Vec<f64> },
    Linear { x: Var, w: Var, b: Var },
    Softmax { x: Var },
    Sigmoid { x: Var },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, factor: f64 },
    MatMul { a: Var, b: Var },
    MatMulBt { a: Var, b: Var },
    Transpose { x: Var },
    SliceCols { x: Var, start: usize },
    ConcatCols { xs: Vec<Var> },
    Concat0 { xs: Vec<Var> },
    Reshape { x: Var },
    Row { x: Var, index: usize },
    Sum { x: Var },
    BinaryCrossEntropy { probs: Var, labels: Vec<f64>, clamp: f64 },
    MeanSquaredError { preds: Var, targets: Vec<f64> },
}

struct Node<'p> {
    value: Cow<'p, Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Append-only computation tape. Parameters are borrowed, not copied, so a
/// graph over large models costs only the activations.
#[derive(Default)]
pub struct Graph<'p> {
    nodes: Vec<Node<'p>>,
}

/// Result of [`Graph::backward`]: one gradient slot per node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `var`; zero when the loss does not depend on it.
    pub fn wrt(&self, var: Var) -> Tensor {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[var.0]),
        }
    }

    pub fn take(&mut self, var: Var) -> Tensor {
        self.grads[var.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[var.0]))
    }
}

fn shape_err(msg: impl Into<String>) -> AutodiffError {
    AutodiffError::ShapeMismatch(msg.into())
}

fn expect_rank(t: &Tensor, rank: usize, what: &str) -> Result<(), AutodiffError> {
    if t.rank() != rank {
        return Err(shape_err(format!("{what}: expected rank {rank}, got shape {:?}", t.shape())));
    }
    Ok(())
}

impl<'p> Graph<'p> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    /// Learnable leaf borrowed from the caller.
    pub fn param(&mut self, t: &'p Tensor) -> Var {
        self.nodes.push(Node { value: Cow::Borrowed(t), op: Op::Leaf, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// Learnable leaf owned by the graph.
    pub fn param_owned(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node { value: Cow::Owned(t), op: Op::Leaf, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// Non-differentiable leaf (data).
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node { value: Cow::Owned(t), op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var], name: &'static str) -> Result<Var, AutodiffError> {
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite(name));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value: Cow::Owned(value), op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Valid (unpadded) strided cross-correlation: `x[C_in × L]`, `w[C_out × C_in × k]`, `bias[C_out]`.
    pub fn conv1d(&mut self, x: Var, w: Var, bias: Var, stride: usize) -> Result<Var, AutodiffError> {
        let (xt, wt, bt) = (self.value(x), self.value(w), self.value(bias));
        expect_rank(xt, 2, "conv1d input")?;
        expect_rank(wt, 3, "conv1d weight")?;
        let (c_in, len) = (xt.shape()[0], xt.shape()[1]);
        let (c_out, w_in, k) = (wt.shape()[0], wt.shape()[1], wt.shape()[2]);
        if w_in != c_in || bt.shape() != [c_out] || stride == 0 || k > len {
            return Err(shape_err(format!(
                "conv1d: x {:?}, w {:?}, bias {:?}, stride {stride}",
                xt.shape(),
                wt.shape(),
                bt.shape()
            )));
        }
        let l_out = (len - k) / stride + 1;
        let cols = kernels::im2col(xt.data(), c_in, len, k, stride, l_out);
        let mut out = vec![0.0; c_out * l_out];
        for (c, row) in out.chunks_mut(l_out).enumerate() {
            row.fill(bt.data()[c]);
        }
        kernels::matmul_acc(wt.data(), &cols, &mut out, c_out, c_in * k, l_out);
        let value = Tensor::new(vec![c_out, l_out], out)?;
        self.push(value, Op::Conv1d { x, w, b: bias, stride }, &[x, w, bias], "conv1d")
    }

    /// Per-channel normalization over the time axis of `x[C × L]`, then per-channel affine.
    pub fn instance_norm(&mut self, x: Var, gain: Var, shift: Var, eps: f64) -> Result<Var, AutodiffError> {
        let (xt, gt, st) = (self.value(x), self.value(gain), self.value(shift));
        expect_rank(xt, 2, "instance_norm input")?;
        let (c, len) = (xt.shape()[0], xt.shape()[1]);
        if len < 2 || gt.shape() != [c] || st.shape() != [c] {
            return Err(shape_err(format!(
                "instance_norm: x {:?}, gain {:?}, shift {:?}",
                xt.shape(),
                gt.shape(),
                st.shape()
            )));
        }
        let (xhat, inv_std) = kernels::normalize_slices(xt.data(), len, eps);
        let mut out = xhat.clone();
        for (ch, row) in out.chunks_mut(len).enumerate() {
            let (g, s) = (gt.data()[ch], st.data()[ch]);
            row.iter_mut().for_each(|v| *v = g * *v + s);
        }
        let value = Tensor::new(vec![c, len], out)?;
        self.push(value, Op::InstanceNorm { x, gain, shift, xhat, inv_std }, &[x, gain, shift], "instance_norm")
    }

    /// Normalization over the last axis, then elementwise affine over that axis.
    pub fn layer_norm(&mut self, x: Var, gain: Var, shift: Var, eps: f64) -> Result<Var, AutodiffError> {
        let (xt, gt, st) = (self.value(x), self.value(gain), self.value(shift));
        let d = xt.last_dim();
        if d < 2 || gt.shape() != [d] || st.shape() != [d] {
            return Err(shape_err(format!(
                "layer_norm: x {:?}, gain {:?}, shift {:?}",
                xt.shape(),
                gt.shape(),
                st.shape()
            )));
        }
        let (xhat, inv_std) = kernels::normalize_slices(xt.data(), d, eps);
        let mut out = xhat.clone();
        for row in out.chunks_mut(d) {
            for ((v, g), s) in row.iter_mut().zip(gt.data()).zip(st.data()) {
                *v = g * *v + s;
            }
        }
        let value = Tensor::new(xt.shape().to_vec(), out)?;
        self.push(value, Op::LayerNorm { x, gain, shift, xhat, inv_std }, &[x, gain, shift], "layer_norm")
    }

    /// Exact-erf GELU.
    pub fn gelu(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let xt = self.value(x);
        let (data, slope) = xt.data().iter().map(|&v| gelu_with_slope(v)).unzip();
        let value = Tensor::new(xt.shape().to_vec(), data)?;
        self.push(value, Op::Gelu { x, slope }, &[x], "gelu")
    }

    /// Affine map over the last axis: `x[… × d_in] · w[d_in × d_out] + b[d_out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, AutodiffError> {
        let (xt, wt, bt) = (self.value(x), self.value(w), self.value(b));
        expect_rank(wt, 2, "linear weight")?;
        let (d_in, d_out) = (wt.shape()[0], wt.shape()[1]);
        if xt.last_dim() != d_in || bt.shape() != [d_out] {
            return Err(shape_err(format!(
                "linear: x {:?}, w {:?}, b {:?}",
                xt.shape(),
                wt.shape(),
                bt.shape()
            )));
        }
        let n = xt.outer();
        let mut out = Vec::with_capacity(n * d_out);
        for _ in 0..n {
            out.extend_from_slice(bt.data());
        }
        kernels::matmul_acc(xt.data(), wt.data(), &mut out, n, d_in, d_out);
        let mut shape = xt.shape().to_vec();
        *shape.last_mut().unwrap() = d_out;
        let value = Tensor::new(shape, out)?;
        self.push(value, Op::Linear { x, w, b }, &[x, w, b], "linear")
    }

    /// Max-subtracted softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let xt = self.value(x);
        let d = xt.last_dim();
        let mut out = xt.data().to_vec();
        for row in out.chunks_mut(d) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row.iter_mut().for_each(|v| *v = (*v - max).exp());
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= total);
        }
        let value = Tensor::new(xt.shape().to_vec(), out)?;
        self.push(value, Op::Softmax { x }, &[x], "softmax")
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let xt = self.value(x);
        let data = xt.data().iter().map(|&v| sigmoid_scalar(v)).collect();
        let value = Tensor::new(xt.shape().to_vec(), data)?;
        self.push(value, Op::Sigmoid { x }, &[x], "sigmoid")
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<(), AutodiffError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(shape_err(format!(
                "{what}: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape(a, b, "add")?;
        let (at, bt) = (self.value(a), self.value(b));
        let data = at.data().iter().zip(bt.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(at.shape().to_vec(), data)?;
        self.push(value, Op::Add { a, b }, &[a, b], "add")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape(a, b, "mul")?;
        let (at, bt) = (self.value(a), self.value(b));
        let data = at.data().iter().zip(bt.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(at.shape().to_vec(), data)?;
        self.push(value, Op::Mul { a, b }, &[a, b], "mul")
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var, AutodiffError> {
        let xt = self.value(x);
        let data = xt.data().iter().map(|v| v * factor).collect();
        let value = Tensor::new(xt.shape().to_vec(), data)?;
        self.push(value, Op::Scale { x, factor }, &[x], "scale")
    }

    /// `a[n×k] · b[k×m]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (at, bt) = (self.value(a), self.value(b));
        expect_rank(at, 2, "matmul lhs")?;
        expect_rank(bt, 2, "matmul rhs")?;
        let (n, k, m) = (at.shape()[0], at.shape()[1], bt.shape()[1]);
        if bt.shape()[0] != k {
            return Err(shape_err(format!("matmul: {:?} · {:?}", at.shape(), bt.shape())));
        }
        let mut out = vec![0.0; n * m];
        kernels::matmul_acc(at.data(), bt.data(), &mut out, n, k, m);
        let value = Tensor::new(vec![n, m], out)?;
        self.push(value, Op::MatMul { a, b }, &[a, b], "matmul")
    }

    /// `a[n×k] · b[m×k]ᵀ`
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (at, bt) = (self.value(a), self.value(b));
        expect_rank(at, 2, "matmul_bt lhs")?;
        expect_rank(bt, 2, "matmul_bt rhs")?;
        let (n, k, m) = (at.shape()[0], at.shape()[1], bt.shape()[0]);
        if bt.shape()[1] != k {
            return Err(shape_err(format!("matmul_bt: {:?} · {:?}ᵀ", at.shape(), bt.shape())));
        }
        let mut out = vec![0.0; n * m];
        kernels::matmul_bt_acc(at.data(), bt.data(), &mut out, n, k, m);
        let value = Tensor::new(vec![n, m], out)?;
        self.push(value, Op::MatMulBt { a, b }, &[a, b], "matmul_bt")
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let xt = self.value(x);
        expect_rank(xt, 2, "transpose")?;
        let (r, c) = (xt.shape()[0], xt.shape()[1]);
        let value = Tensor::new(vec![c, r], transpose_data(xt.data(), r, c))?;
        self.push(value, Op::Transpose { x }, &[x], "transpose")
    }

    /// Columns `[start, start + len)` of a 2-D tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let xt = self.value(x);
        expect_rank(xt, 2, "slice_cols")?;
        let (r, c) = (xt.shape()[0], xt.shape()[1]);
        if len == 0 || start + len > c {
            return Err(shape_err(format!("slice_cols [{start}, {}) of {:?}", start + len, xt.shape())));
        }
        let mut out = Vec::with_capacity(r * len);
        for row in xt.data().chunks(c) {
            out.extend_from_slice(&row[start..start + len]);
        }
        let value = Tensor::new(vec![r, len], out)?;
        self.push(value, Op::SliceCols { x, start }, &[x], "slice_cols")
    }

    /// Horizontal concatenation of 2-D tensors with equal row counts.
    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var, AutodiffError> {
        let first = xs.first().ok_or_else(|| shape_err("concat_cols: no inputs"))?;
        let rows = self.value(*first).shape()[0];
        let mut widths = Vec::with_capacity(xs.len());
        for &v in xs {
            let t = self.value(v);
            expect_rank(t, 2, "concat_cols")?;
            if t.shape()[0] != rows {
                return Err(shape_err(format!("concat_cols: row count {} vs {rows}", t.shape()[0])));
            }
            widths.push(t.shape()[1]);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&v, &w) in xs.iter().zip(&widths) {
                out.extend_from_slice(&self.value(v).data()[r * w..(r + 1) * w]);
            }
        }
        let value = Tensor::new(vec![rows, total], out)?;
        self.push(value, Op::ConcatCols { xs: xs.to_vec() }, xs, "concat_cols")
    }

    /// Concatenation along axis 0; trailing dimensions must agree.
    pub fn concat0(&mut self, xs: &[Var]) -> Result<Var, AutodiffError> {
        let first = xs.first().ok_or_else(|| shape_err("concat0: no inputs"))?;
        let trailing = self.value(*first).shape()[1..].to_vec();
        let mut lead = 0;
        let mut out = Vec::new();
        for &v in xs {
            let t = self.value(v);
            if t.shape()[1..] != trailing[..] {
                return Err(shape_err(format!("concat0: {:?} vs trailing {trailing:?}", t.shape())));
            }
            lead += t.shape()[0];
            out.extend_from_slice(t.data());
        }
        let mut shape = vec![lead];
        shape.extend(trailing);
        let value = Tensor::new(shape, out)?;
        self.push(value, Op::Concat0 { xs: xs.to_vec() }, xs, "concat0")
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        let value = self.value(x).clone().reshaped(shape)?;
        self.push(value, Op::Reshape { x }, &[x], "reshape")
    }

    /// Row `index` of a 2-D tensor as a 1-D tensor.
    pub fn row(&mut self, x: Var, index: usize) -> Result<Var, AutodiffError> {
        let xt = self.value(x);
        expect_rank(xt, 2, "row")?;
        if index >= xt.shape()[0] {
            return Err(shape_err(format!("row {index} of {:?}", xt.shape())));
        }
        let value = Tensor::from_vec(xt.row(index).to_vec());
        self.push(value, Op::Row { x, index }, &[x], "row")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(value, Op::Sum { x }, &[x], "sum")
    }

    /// Mean binary cross-entropy of probabilities against 0/1 labels; the
    /// probabilities are clamped to `[clamp, 1 − clamp]` before the log.
    pub fn binary_cross_entropy(&mut self, probs: Var, labels: &[f64], clamp: f64) -> Result<Var, AutodiffError> {
        let pt = self.value(probs);
        if pt.rank() != 1 || pt.numel() != labels.len() {
            return Err(shape_err(format!("bce: probs {:?}, {} labels", pt.shape(), labels.len())));
        }
        let loss = bce_value(pt.data(), labels, clamp);
        self.push(
            Tensor::scalar(loss),
            Op::BinaryCrossEntropy { probs, labels: labels.to_vec(), clamp },
            &[probs],
            "binary_cross_entropy",
        )
    }

    pub fn mean_squared_error(&mut self, preds: Var, targets: &[f64]) -> Result<Var, AutodiffError> {
        let pt = self.value(preds);
        if pt.rank() != 1 || pt.numel() != targets.len() {
            return Err(shape_err(format!("mse: preds {:?}, {} targets", pt.shape(), targets.len())));
        }
        let loss = pt.data().iter().zip(targets).map(|(p, t)| (t - p) * (t - p)).sum::<f64>() / targets.len() as f64;
        self.push(
            Tensor::scalar(loss),
            Op::MeanSquaredError { preds, targets: targets.to_vec() },
            &[preds],
            "mean_squared_error",
        )
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, AutodiffError> {
        let loss_shape = self.value(loss).shape().to_vec();
        if self.value(loss).numel() != 1 {
            return Err(AutodiffError::NotScalarLoss(loss_shape));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(&loss_shape, 1.0));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(upstream) = grads[id].take() else { continue };
            self.propagate(id, &upstream, &mut grads);
            grads[id] = Some(upstream);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn accumulate_with(&self, grads: &mut [Option<Tensor>], v: Var, f: impl FnOnce(&mut [f64])) {
        let slot = &mut grads[v.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(self.value(v).shape()));
        }
        f(slot.as_mut().unwrap().data_mut());
    }

    fn propagate(&self, id: usize, up: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[id];
        let dy = up.data();
        match &node.op {
            Op::Leaf => {}
            Op::Conv1d { x, w, b, stride } => {
                let (xt, wt) = (self.value(*x), self.value(*w));
                let (c_in, len) = (xt.shape()[0], xt.shape()[1]);
                let (c_out, k) = (wt.shape()[0], wt.shape()[2]);
                let l_out = node.value.shape()[1];
                let ck = c_in * k;
                if self.wants(*b) {
                    self.accumulate_with(grads, *b, |db| {
                        for (c, row) in dy.chunks(l_out).enumerate() {
                            db[c] += row.iter().sum::<f64>();
                        }
                    });
                }
                if self.wants(*w) {
                    let cols = kernels::im2col(xt.data(), c_in, len, k, *stride, l_out);
                    self.accumulate_with(grads, *w, |dw| {
                        kernels::matmul_bt_acc(dy, &cols, dw, c_out, l_out, ck);
                    });
                }
                if self.wants(*x) {
                    let mut dcols = vec![0.0; ck * l_out];
                    kernels::matmul_at_acc(wt.data(), dy, &mut dcols, c_out, ck, l_out);
                    self.accumulate_with(grads, *x, |dx| {
                        kernels::col2im_acc(&dcols, dx, c_in, len, k, *stride, l_out);
                    });
                }
            }
            Op::InstanceNorm { x, gain, shift, xhat, inv_std } => {
                let len = node.value.shape()[1];
                let gt = self.value(*gain);
                if self.wants(*gain) {
                    self.accumulate_with(grads, *gain, |dg| {
                        for (c, (dyr, xhr)) in dy.chunks(len).zip(xhat.chunks(len)).enumerate() {
                            dg[c] += kernels::dot(dyr, xhr);
                        }
                    });
                }
                if self.wants(*shift) {
                    self.accumulate_with(grads, *shift, |ds| {
                        for (c, dyr) in dy.chunks(len).enumerate() {
                            ds[c] += dyr.iter().sum::<f64>();
                        }
                    });
                }
                if self.wants(*x) {
                    let mut dxhat = dy.to_vec();
                    for (c, row) in dxhat.chunks_mut(len).enumerate() {
                        let g = gt.data()[c];
                        row.iter_mut().for_each(|v| *v *= g);
                    }
                    self.accumulate_with(grads, *x, |dx| {
                        kernels::normalize_slices_backward(xhat, inv_std, &dxhat, len, dx);
                    });
                }
            }
            Op::LayerNorm { x, gain, shift, xhat, inv_std } => {
                let d = node.value.last_dim();
                let gt = self.value(*gain);
                if self.wants(*gain) {
                    self.accumulate_with(grads, *gain, |dg| {
                        for (dyr, xhr) in dy.chunks(d).zip(xhat.chunks(d)) {
                            for ((g, a), b) in dg.iter_mut().zip(dyr).zip(xhr) {
                                *g += a * b;
                            }
                        }
                    });
                }
                if self.wants(*shift) {
                    self.accumulate_with(grads, *shift, |ds| {
                        for dyr in dy.chunks(d) {
                            for (s, a) in ds.iter_mut().zip(dyr) {
                                *s += a;
                            }
                        }
                    });
                }
                if self.wants(*x) {
                    let mut dxhat = dy.to_vec();
                    for row in dxhat.chunks_mut(d) {
                        for (v, g) in row.iter_mut().zip(gt.data()) {
                            *v *= g;
                        }
                    }
                    self.accumulate_with(grads, *x, |dx| {
                        kernels::normalize_slices_backward(xhat, inv_std, &dxhat, d, dx);
                    });
                }
            }
            Op::Gelu { x, slope } => {
                if self.wants(*x) {
                    self.accumulate_with(grads, *x, |dx| {
                        for ((o, &g), &s) in dx.iter_mut().zip(dy).zip(slope) {
                            *o += g * s;
                        }
                    });
                }
            }
            Op::Linear { x, w, b } => {
                let (xt, wt) = (self.value(*x), self.value(*w));
                let (d_in, d_out) = (wt.shape()[0], wt.shape()[1]);
                let n = xt.outer();
                if self.wants(*b) {
                    self.accumulate_with(grads, *b, |db| {
                        for row in dy.chunks(d_out) {
                            for (o, g) in db.iter_mut().zip(row) {
                                *o += g;
                            }
                        }
                    });
                }
                if self.wants(*w) {
                    self.accumulate_with(grads, *w, |dw| {
                        kernels::matmul_at_acc(xt.data(), dy, dw, n, d_in, d_out);
                    });
                }
                if self.wants(*x) {
                    self.accumulate_with(grads, *x, |dx| {
                        kernels::matmul_bt_acc(dy, wt.data(), dx, n, d_out, d_in);
                    });
                }
            }
            Op::Softmax { x } => {
                if self.wants(*x) {
                    let d = node.value.last_dim();
                    let y = node.value.data();
                    self.accumulate_with(grads, *x, |dx| {
                        for ((dxr, yr), gr) in dx.chunks_mut(d).zip(y.chunks(d)).zip(dy.chunks(d)) {
                            let inner = kernels::dot(gr, yr);
                            for ((o, &yi), &gi) in dxr.iter_mut().zip(yr).zip(gr) {
                                *o += yi * (gi - inner);
                            }
                        }
                    });
                }
            }
            Op::Sigmoid { x } => {
                if self.wants(*x) {
                    let y = node.value.data();
                    self.accumulate_with(grads, *x, |dx| {
                        for ((o, &g), &s) in dx.iter_mut().zip(dy).zip(y) {
                            *o += g * s * (1.0 - s);
                        }
                    });
                }
            }
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    if self.wants(v) {
                        self.accumulate(grads, v, up.clone());
                    }
                }
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*a) {
                    self.accumulate_with(grads, *a, |da| {
                        for ((o, g), y) in da.iter_mut().zip(dy).zip(bv) {
                            *o += g * y;
                        }
                    });
                }
                if self.wants(*b) {
                    self.accumulate_with(grads, *b, |db| {
                        for ((o, g), x) in db.iter_mut().zip(dy).zip(av) {
                            *o += g * x;
                        }
                    });
                }
            }
            Op::Scale { x, factor } => {
                if self.wants(*x) {
                    self.accumulate_with(grads, *x, |dx| kernels::axpy(*factor, dy, dx));
                }
            }
            Op::MatMul { a, b } => {
                let (at, bt) = (self.value(*a), self.value(*b));
                let (n, k, m) = (at.shape()[0], at.shape()[1], bt.shape()[1]);
                if self.wants(*a) {
                    self.accumulate_with(grads, *a, |da| kernels::matmul_bt_acc(dy, bt.data(), da, n, m, k));
                }
                if self.wants(*b) {
                    self.accumulate_with(grads, *b, |db| kernels::matmul_at_acc(at.data(), dy, db, n, k, m));
                }
            }
            Op::MatMulBt { a, b } => {
                let (at, bt) = (self.value(*a), self.value(*b));
                let (n, k, m) = (at.shape()[0], at.shape()[1], bt.shape()[0]);
                if self.wants(*a) {
                    self.accumulate_with(grads, *a, |da| kernels::matmul_acc(dy, bt.data(), da, n, m, k));
                }
                if self.wants(*b) {
                    self.accumulate_with(grads, *b, |db| kernels::matmul_at_acc(dy, at.data(), db, n, m, k));
                }
            }
            Op::Transpose { x } => {
                if self.wants(*x) {
                    let (r, c) = (node.value.shape()[0], node.value.shape()[1]);
                    let t = transpose_data(dy, r, c);
                    self.accumulate_with(grads, *x, |dx| kernels::axpy(1.0, &t, dx));
                }
            }
            Op::SliceCols { x, start } => {
                if self.wants(*x) {
                    let c = self.value(*x).shape()[1];
                    let len = node.value.shape()[1];
                    self.accumulate_with(grads, *x, |dx| {
                        for (dxr, gr) in dx.chunks_mut(c).zip(dy.chunks(len)) {
                            kernels::axpy(1.0, gr, &mut dxr[*start..*start + len]);
                        }
                    });
                }
            }
            Op::ConcatCols { xs } => {
                let total = node.value.shape()[1];
                let mut offset = 0;
                for &v in xs {
                    let w = self.value(v).shape()[1];
                    if self.wants(v) {
                        self.accumulate_with(grads, v, |dx| {
                            for (dxr, gr) in dx.chunks_mut(w).zip(dy.chunks(total)) {
                                kernels::axpy(1.0, &gr[offset..offset + w], dxr);
                            }
                        });
                    }
                    offset += w;
                }
            }
            Op::Concat0 { xs } => {
                let mut offset = 0;
                for &v in xs {
                    let n = self.value(v).numel();
                    if self.wants(v) {
                        self.accumulate_with(grads, v, |dx| kernels::axpy(1.0, &dy[offset..offset + n], dx));
                    }
                    offset += n;
                }
            }
            Op::Reshape { x } => {
                if self.wants(*x) {
                    self.accumulate_with(grads, *x, |dx| kernels::axpy(1.0, dy, dx));
                }
            }
            Op::Row { x, index } => {
                if self.wants(*x) {
                    let d = node.value.numel();
                    self.accumulate_with(grads, *x, |dx| {
                        kernels::axpy(1.0, dy, &mut dx[index * d..(index + 1) * d]);
                    });
                }
            }
            Op::Sum { x } => {
                if self.wants(*x) {
                    let g = dy[0];
                    self.accumulate_with(grads, *x, |dx| dx.iter_mut().for_each(|v| *v += g));
                }
            }
            Op::BinaryCrossEntropy { probs, labels, clamp } => {
                if self.wants(*probs) {
                    let p = self.value(*probs).data();
                    let scale = dy[0] / labels.len() as f64;
                    self.accumulate_with(grads, *probs, |dp| {
                        for ((o, &pi), &yi) in dp.iter_mut().zip(p).zip(labels) {
                            // Clamped probabilities are locally constant.
                            if pi > *clamp && pi < 1.0 - *clamp {
                                *o += -scale * (yi / pi - (1.0 - yi) / (1.0 - pi));
                            }
                        }
                    });
                }
            }
            Op::MeanSquaredError { preds, targets } => {
                if self.wants(*preds) {
                    let p = self.value(*preds).data();
                    let scale = dy[0] * 2.0 / targets.len() as f64;
                    self.accumulate_with(grads, *preds, |dp| {
                        for ((o, &pi), &ti) in dp.iter_mut().zip(p).zip(targets) {
                            *o += scale * (pi - ti);
                        }
                    });
                }
            }
        }
    }
}

fn transpose_data(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

/// Mean binary cross-entropy with probability clamping.
pub fn bce_value(probs: &[f64], labels: &[f64], clamp: f64) -> f64 {
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(clamp, 1.0 - clamp);
            y * p.ln() + (1.0 - y) * (1.0 - p).ln()
        })
        .sum();
    -total / labels.len() as f64
}
