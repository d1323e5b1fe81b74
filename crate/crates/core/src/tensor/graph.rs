use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// What a node is: a trainable leaf, a differentiable input leaf, a constant
/// leaf, or the output of an operation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Param,
    Input,
    Constant,
    Op,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    },
    Relu(Var),
    GlobalAvgPool(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sigmoid(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
    Mse(Var, Var),
    L2Norm(Var),
    Sum(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    role: Role,
    requires_grad: bool,
}

/// Append-only computation tape.
///
/// Nodes are pushed in evaluation order, so the tape is topologically sorted
/// by construction. Leaves are added with [`Graph::param`], [`Graph::input`]
/// (both differentiable) or [`Graph::constant`]; gradients are only
/// propagated along paths that reach a differentiable leaf.
#[derive(Debug)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    backward_done: bool,
    backward_calls: usize,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            backward_done: false,
            backward_calls: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of completed [`Graph::backward`] calls on this tape.
    pub fn backward_calls(&self) -> usize {
        self.backward_calls
    }

    fn push_leaf(&mut self, mut value: Tensor<T>, role: Role) -> Var {
        value.clear_grad();
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            role,
            requires_grad: role != Role::Constant,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, Role::Param)
    }

    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, Role::Input)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, Role::Constant)
    }

    fn push_op(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            role: Role::Op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn role(&self, v: Var) -> Role {
        self.nodes[v.0].role
    }

    /// Gradient slot of a differentiable leaf, populated by `backward`.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<T>> {
        self.nodes[v.0].value.take_grad()
    }

    /// Clears every gradient slot so that `backward` may run again.
    pub fn reset_grads(&mut self) {
        for node in &mut self.nodes {
            node.value.clear_grad();
        }
        self.backward_done = false;
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let av = ad[i * k + p];
                let brow = &bd[p * n..(p + 1) * n];
                for (o, &bv) in row.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push_op(value, Op::MatMul(a, b), &[a, b]))
    }

    /// 2-D convolution over `[N, C, H, W]` input with an `[O, C, KH, KW]`
    /// kernel, optional `[O]` bias, and symmetric zero padding.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let si = self.value(input).shape().to_vec();
        let sk = self.value(kernel).shape().to_vec();
        if si.len() != 4 || sk.len() != 4 || si[1] != sk[1] {
            return Err(Error::shape("conv2d", format!("input {si:?}, kernel {sk:?}")));
        }
        if stride == 0 {
            return Err(Error::shape("conv2d", "stride must be >= 1"));
        }
        if let Some(b) = bias {
            let sb = self.value(b).shape();
            if sb != [sk[0]] {
                return Err(Error::shape("conv2d", format!("bias {sb:?} for {} filters", sk[0])));
            }
        }
        let geom = ConvGeom::new(&si, &sk, stride, padding)?;
        let x = self.value(input).data();
        let w = self.value(kernel).data();
        let b = bias.map(|b| self.value(b).data());
        let mut out = vec![T::zero(); geom.n * geom.o * geom.oh * geom.ow];
        let plane = geom.oh * geom.ow;
        for n in 0..geom.n {
            for o in 0..geom.o {
                let dst = &mut out[(n * geom.o + o) * plane..(n * geom.o + o + 1) * plane];
                if let Some(b) = b {
                    dst.iter_mut().for_each(|v| *v = b[o]);
                }
                for c in 0..geom.c {
                    let src = &x[(n * geom.c + c) * geom.h * geom.w..][..geom.h * geom.w];
                    for ky in 0..geom.kh {
                        let (oy0, oy1) = geom.rows(ky);
                        for kx in 0..geom.kw {
                            let wv = w[((o * geom.c + c) * geom.kh + ky) * geom.kw + kx];
                            let (ox0, ox1) = geom.cols(kx);
                            for oy in oy0..oy1 {
                                let iy = oy * stride + ky - padding;
                                let drow = &mut dst[oy * geom.ow..(oy + 1) * geom.ow];
                                let srow = &src[iy * geom.w..(iy + 1) * geom.w];
                                for ox in ox0..ox1 {
                                    drow[ox] += wv * srow[ox * stride + kx - padding];
                                }
                            }
                        }
                    }
                }
            }
        }
        let value = Tensor::new(vec![geom.n, geom.o, geom.oh, geom.ow], out)?;
        let op = Op::Conv2d {
            input,
            kernel,
            bias,
            stride,
            padding,
        };
        let mut deps = vec![input, kernel];
        deps.extend(bias);
        Ok(self.push_op(value, op, &deps))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let value = self
            .value(a)
            .map(|v| if v > T::zero() || v.is_nan() { v } else { T::zero() });
        Ok(self.push_op(value, Op::Relu(a), &[a]))
    }

    /// `[N, C, H, W] -> [N, C]` spatial mean.
    pub fn global_avg_pool(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).shape().to_vec();
        if s.len() != 4 {
            return Err(Error::shape("global_avg_pool", format!("expected NCHW, got {s:?}")));
        }
        let plane = s[2] * s[3];
        let inv = T::one() / T::from_usize(plane).unwrap();
        let out: Vec<T> = self
            .value(a)
            .data()
            .chunks_exact(plane)
            .map(|c| c.iter().copied().sum::<T>() * inv)
            .collect();
        let value = Tensor::new(vec![s[0], s[1]], out)?;
        Ok(self.push_op(value, Op::GlobalAvgPool(a), &[a]))
    }

    /// Elementwise sum. `b` may also match only the trailing dimensions of
    /// `a`, in which case it is broadcast over the leading ones (bias add).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(Error::shape("add", format!("{sa:?} + {sb:?}")));
        }
        let bd = self.value(b).data();
        let period = bd.len();
        let mut value = self.value(a).clone();
        for chunk in value.data_mut().chunks_exact_mut(period) {
            for (x, &y) in chunk.iter_mut().zip(bd) {
                *x += y;
            }
        }
        Ok(self.push_op(value, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape("mul", format!("{sa:?} * {sb:?}")));
        }
        let mut value = self.value(a).clone();
        for (x, &y) in value.data_mut().iter_mut().zip(self.value(b).data()) {
            *x *= y;
        }
        Ok(self.push_op(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Result<Var> {
        let value = self.value(a).map(|v| v * factor);
        Ok(self.push_op(value, Op::Scale(a, factor), &[a]))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(|v| T::one() / (T::one() + (-v).exp()));
        Ok(self.push_op(value, Op::Sigmoid(a), &[a]))
    }

    /// Mean softmax cross-entropy of `[N, M]` logits (or `[M]` for a single
    /// row) against `N` class labels. Returns a scalar.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.value(logits).shape();
        let (n, m) = match *s {
            [m] => (1, m),
            [n, m] => (n, m),
            _ => return Err(Error::shape("softmax_cross_entropy", format!("logits {s:?}"))),
        };
        if labels.len() != n {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("{n} rows but {} labels", labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= m) {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("label {bad} out of range for {m} classes"),
            ));
        }
        let z = self.value(logits).data();
        let mut probs = vec![T::zero(); n * m];
        let mut total = T::zero();
        for (r, &label) in labels.iter().enumerate() {
            let row = &z[r * m..(r + 1) * m];
            let max = row.iter().copied().fold(T::neg_infinity(), |acc, v| {
                if v > acc || v.is_nan() {
                    v
                } else {
                    acc
                }
            });
            let mut denom = T::zero();
            for (p, &v) in probs[r * m..(r + 1) * m].iter_mut().zip(row) {
                *p = (v - max).exp();
                denom += *p;
            }
            for p in &mut probs[r * m..(r + 1) * m] {
                *p /= denom;
            }
            total += denom.ln() + max - row[label];
        }
        let value = Tensor::scalar(total / T::from_usize(n).unwrap());
        let op = Op::SoftmaxCrossEntropy {
            logits,
            labels: labels.to_vec(),
            probs,
        };
        Ok(self.push_op(value, op, &[logits]))
    }

    /// Mean squared difference, a scalar.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape("mse", format!("{sa:?} vs {sb:?}")));
        }
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let sum: T = ad.iter().zip(bd).map(|(&x, &y)| (x - y) * (x - y)).sum();
        let value = Tensor::scalar(sum / T::from_usize(ad.len()).unwrap());
        Ok(self.push_op(value, Op::Mse(a, b), &[a, b]))
    }

    /// Euclidean norm over all elements, a scalar.
    pub fn l2_norm(&mut self, a: Var) -> Result<Var> {
        let sq: T = self.value(a).data().iter().map(|&v| v * v).sum();
        let value = Tensor::scalar(sq.sqrt());
        Ok(self.push_op(value, Op::L2Norm(a), &[a]))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let total: T = self.value(a).data().iter().copied().sum();
        let value = Tensor::scalar(total);
        Ok(self.push_op(value, Op::Sum(a), &[a]))
    }

    /// Reverse sweep from a scalar `loss`. Afterwards every differentiable
    /// leaf holds `d loss / d leaf` in its gradient slot; leaves that the loss
    /// does not depend on hold zeros.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        let shape = self.value(loss).shape();
        if self.value(loss).numel() != 1 {
            return Err(Error::NonScalarLoss(shape.to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            if matches!(self.nodes[idx].op, Op::Leaf) {
                grads[idx] = Some(g);
                continue;
            }
            self.propagate(idx, &g, &mut grads);
        }

        for (node, g) in self.nodes.iter_mut().zip(grads) {
            if node.role == Role::Op || !node.requires_grad {
                continue;
            }
            let g = g.unwrap_or_else(|| vec![T::zero(); node.value.numel()]);
            node.value.set_grad(g)?;
        }
        self.backward_done = true;
        self.backward_calls += 1;
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let needs = |v: Var| nodes[v.0].requires_grad;
        let val = |v: Var| &nodes[v.0].value;

        match &nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (val(*a).shape(), val(*b).shape());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if needs(*a) {
                    let bd = val(*b).data();
                    accumulate(grads, *a, m * k, |da| {
                        for i in 0..m {
                            for p in 0..k {
                                let brow = &bd[p * n..(p + 1) * n];
                                let grow = &g[i * n..(i + 1) * n];
                                da[i * k + p] +=
                                    brow.iter().zip(grow).map(|(&x, &y)| x * y).sum::<T>();
                            }
                        }
                    });
                }
                if needs(*b) {
                    let ad = val(*a).data();
                    accumulate(grads, *b, k * n, |db| {
                        for i in 0..m {
                            let grow = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                let av = ad[i * k + p];
                                for (d, &y) in db[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                    *d += av * y;
                                }
                            }
                        }
                    });
                }
            }
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                padding,
            } => {
                let (stride, padding) = (*stride, *padding);
                let geom = ConvGeom::new(val(*input).shape(), val(*kernel).shape(), stride, padding)
                    .expect("validated in forward");
                let plane = geom.oh * geom.ow;
                let x = val(*input).data();
                let w = val(*kernel).data();
                if let Some(b) = bias {
                    if needs(*b) {
                        accumulate(grads, *b, geom.o, |db| {
                            for n in 0..geom.n {
                                for (o, d) in db.iter_mut().enumerate() {
                                    let gs = &g[(n * geom.o + o) * plane..][..plane];
                                    *d += gs.iter().copied().sum::<T>();
                                }
                            }
                        });
                    }
                }
                if needs(*kernel) {
                    accumulate(grads, *kernel, w.len(), |dw| {
                        for n in 0..geom.n {
                            for o in 0..geom.o {
                                let gs = &g[(n * geom.o + o) * plane..][..plane];
                                for c in 0..geom.c {
                                    let src = &x[(n * geom.c + c) * geom.h * geom.w..][..geom.h * geom.w];
                                    for ky in 0..geom.kh {
                                        let (oy0, oy1) = geom.rows(ky);
                                        for kx in 0..geom.kw {
                                            let (ox0, ox1) = geom.cols(kx);
                                            let mut acc = T::zero();
                                            for oy in oy0..oy1 {
                                                let iy = oy * stride + ky - padding;
                                                let grow = &gs[oy * geom.ow..(oy + 1) * geom.ow];
                                                let srow = &src[iy * geom.w..(iy + 1) * geom.w];
                                                for ox in ox0..ox1 {
                                                    acc += grow[ox] * srow[ox * stride + kx - padding];
                                                }
                                            }
                                            dw[((o * geom.c + c) * geom.kh + ky) * geom.kw + kx] += acc;
                                        }
                                    }
                                }
                            }
                        }
                    });
                }
                if needs(*input) {
                    accumulate(grads, *input, x.len(), |dx| {
                        for n in 0..geom.n {
                            for o in 0..geom.o {
                                let gs = &g[(n * geom.o + o) * plane..][..plane];
                                for c in 0..geom.c {
                                    let dst = &mut dx[(n * geom.c + c) * geom.h * geom.w..][..geom.h * geom.w];
                                    for ky in 0..geom.kh {
                                        let (oy0, oy1) = geom.rows(ky);
                                        for kx in 0..geom.kw {
                                            let wv = w[((o * geom.c + c) * geom.kh + ky) * geom.kw + kx];
                                            let (ox0, ox1) = geom.cols(kx);
                                            for oy in oy0..oy1 {
                                                let iy = oy * stride + ky - padding;
                                                let grow = &gs[oy * geom.ow..(oy + 1) * geom.ow];
                                                let drow = &mut dst[iy * geom.w..(iy + 1) * geom.w];
                                                for ox in ox0..ox1 {
                                                    drow[ox * stride + kx - padding] += wv * grow[ox];
                                                }
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    });
                }
            }
            Op::Relu(a) => {
                let xs = val(*a).data();
                accumulate(grads, *a, xs.len(), |da| {
                    for ((d, &x), &gv) in da.iter_mut().zip(xs).zip(g) {
                        if x > T::zero() {
                            *d += gv;
                        } else if x.is_nan() {
                            *d += x;
                        }
                    }
                });
            }
            Op::GlobalAvgPool(a) => {
                let s = val(*a).shape();
                let plane = s[2] * s[3];
                let inv = T::one() / T::from_usize(plane).unwrap();
                accumulate(grads, *a, val(*a).numel(), |da| {
                    for (chunk, &gv) in da.chunks_exact_mut(plane).zip(g) {
                        let share = gv * inv;
                        chunk.iter_mut().for_each(|d| *d += share);
                    }
                });
            }
            Op::Add(a, b) => {
                if needs(*a) {
                    accumulate(grads, *a, g.len(), |da| {
                        da.iter_mut().zip(g).for_each(|(d, &gv)| *d += gv);
                    });
                }
                if needs(*b) {
                    let period = val(*b).numel();
                    accumulate(grads, *b, period, |db| {
                        for chunk in g.chunks_exact(period) {
                            db.iter_mut().zip(chunk).for_each(|(d, &gv)| *d += gv);
                        }
                    });
                }
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    let bd = val(*b).data();
                    accumulate(grads, *a, g.len(), |da| {
                        for ((d, &gv), &y) in da.iter_mut().zip(g).zip(bd) {
                            *d += gv * y;
                        }
                    });
                }
                if needs(*b) {
                    let ad = val(*a).data();
                    accumulate(grads, *b, g.len(), |db| {
                        for ((d, &gv), &x) in db.iter_mut().zip(g).zip(ad) {
                            *d += gv * x;
                        }
                    });
                }
            }
            Op::Scale(a, factor) => {
                accumulate(grads, *a, g.len(), |da| {
                    da.iter_mut().zip(g).for_each(|(d, &gv)| *d += *factor * gv);
                });
            }
            Op::Sigmoid(a) => {
                let ys = nodes[idx].value.data();
                accumulate(grads, *a, g.len(), |da| {
                    for ((d, &gv), &y) in da.iter_mut().zip(g).zip(ys) {
                        *d += gv * y * (T::one() - y);
                    }
                });
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let n = labels.len();
                let m = probs.len() / n;
                let scale = g[0] / T::from_usize(n).unwrap();
                accumulate(grads, *logits, probs.len(), |dz| {
                    for (r, &label) in labels.iter().enumerate() {
                        for j in 0..m {
                            let target = if j == label { T::one() } else { T::zero() };
                            dz[r * m + j] += scale * (probs[r * m + j] - target);
                        }
                    }
                });
            }
            Op::Mse(a, b) => {
                let (ad, bd) = (val(*a).data(), val(*b).data());
                let coef = T::lit(2.0) * g[0] / T::from_usize(ad.len()).unwrap();
                if needs(*a) {
                    accumulate(grads, *a, ad.len(), |da| {
                        for ((d, &x), &y) in da.iter_mut().zip(ad).zip(bd) {
                            *d += coef * (x - y);
                        }
                    });
                }
                if needs(*b) {
                    accumulate(grads, *b, bd.len(), |db| {
                        for ((d, &x), &y) in db.iter_mut().zip(ad).zip(bd) {
                            *d -= coef * (x - y);
                        }
                    });
                }
            }
            Op::L2Norm(a) => {
                let norm = nodes[idx].value.item();
                let xs = val(*a).data();
                accumulate(grads, *a, xs.len(), |da| {
                    if norm > T::zero() {
                        let coef = g[0] / norm;
                        da.iter_mut().zip(xs).for_each(|(d, &x)| *d += coef * x);
                    }
                });
            }
            Op::Sum(a) => {
                let len = val(*a).numel();
                accumulate(grads, *a, len, |da| da.iter_mut().for_each(|d| *d += g[0]));
            }
        }
    }
}

fn accumulate<T: Scalar>(
    grads: &mut [Option<Vec<T>>],
    v: Var,
    len: usize,
    f: impl FnOnce(&mut [T]),
) {
    let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); len]);
    f(slot);
}

/// Output geometry and valid-tap ranges for a strided, zero-padded conv.
struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    padding: usize,
}

impl ConvGeom {
    fn new(si: &[usize], sk: &[usize], stride: usize, padding: usize) -> Result<Self> {
        let (n, c, h, w) = (si[0], si[1], si[2], si[3]);
        let (o, kh, kw) = (sk[0], sk[2], sk[3]);
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {kh}x{kw} larger than padded input {h}x{w} (pad {padding})"),
            ));
        }
        Ok(ConvGeom {
            n,
            c,
            h,
            w,
            o,
            kh,
            kw,
            oh: (h + 2 * padding - kh) / stride + 1,
            ow: (w + 2 * padding - kw) / stride + 1,
            stride,
            padding,
        })
    }

    /// Output rows `oy` for which `oy * stride + ky - padding` lands inside the input.
    fn rows(&self, ky: usize) -> (usize, usize) {
        valid_range(self.oh, self.h, ky, self.stride, self.padding)
    }

    fn cols(&self, kx: usize) -> (usize, usize) {
        valid_range(self.ow, self.w, kx, self.stride, self.padding)
    }
}

fn valid_range(out_len: usize, in_len: usize, tap: usize, stride: usize, padding: usize) -> (usize, usize) {
    let lo = if padding > tap {
        (padding - tap).div_ceil(stride)
    } else {
        0
    };
    // largest o with o * stride + tap - padding <= in_len - 1
    let hi = if in_len + padding > tap {
        ((in_len - 1 + padding - tap) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}
