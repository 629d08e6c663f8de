//! Wengert-list reverse-mode differentiation.
//!
//! Every primitive appends one node holding its output value and whatever it
//! needs for the backward pass. Nodes only reference earlier nodes, so a single
//! reverse sweep visits them in topological order.

use crate::error::{Error, Result};

use super::tensor::{gemm, Real, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise nonlinearities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Unary {
    Relu,
    Sin,
    Cos,
    Square,
    /// Piecewise log/linear penalty on a distance, joined continuously at `w`.
    Wing { w: f64, eps: f64 },
}

impl Unary {
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            Unary::Relu => x.max(T::zero()),
            Unary::Sin => x.sin(),
            Unary::Cos => x.cos(),
            Unary::Square => x * x,
            Unary::Wing { w, eps } => {
                let a = x.abs().f64();
                let v = if a < w {
                    w * (a / eps).ln_1p()
                } else {
                    a - (w - w * (w / eps).ln_1p())
                };
                T::of(v)
            }
        }
    }

    pub fn derivative<T: Real>(self, x: T) -> T {
        match self {
            Unary::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Unary::Sin => x.cos(),
            Unary::Cos => -x.sin(),
            Unary::Square => x + x,
            Unary::Wing { w, eps } => {
                let a = x.abs().f64();
                let sign = if x > T::zero() {
                    1.0
                } else if x < T::zero() {
                    -1.0
                } else {
                    0.0
                };
                let d = if a < w { w / (eps + a) } else { 1.0 };
                T::of(sign * d)
            }
        }
    }
}

/// Batch-norm running statistics, updated in training mode.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

impl<T: Real> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: Tensor::zeros(&[channels]),
            var: Tensor::ones(&[channels]),
        }
    }
}

pub const BATCH_NORM_EPS: f64 = 1e-5;
pub const BATCH_NORM_MOMENTUM: f64 = 0.1;
pub const LAYER_NORM_EPS: f64 = 1e-5;

enum Op<T> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddTiled {
        x: Var,
        pattern: Var,
    },
    Scale {
        x: Var,
        c: T,
    },
    MulScalar {
        x: Var,
        s: Var,
    },
    Unary {
        x: Var,
        f: Unary,
    },
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    SwapLast2 {
        x: Var,
        outer: usize,
        rows: usize,
        cols: usize,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        cols: Vec<T>,
        batch: usize,
        c_in: usize,
        len: usize,
        c_out: usize,
        k: usize,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        batch: usize,
        heads: usize,
        probs: Vec<T>,
    },
    SelectRows {
        x: Var,
        rows: Vec<usize>,
    },
    PointNorm {
        x: Var,
        group: usize,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Ordered record of primitive operations.
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros shaped like `like` if the loss does not depend on it.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor<T>) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Softmax weights saved by an attention node, laid out `[batch, heads, T, T]`.
    pub fn attention_probs(&self, v: Var) -> Option<&[T]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn leaf(&mut self, t: Tensor<T>, requires_grad: bool) -> Var {
        self.push(t, Op::Leaf, requires_grad)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::MatMul { a, b }, rg))
    }

    /// `x · w + b` with `x: [m, k]`, `w: [k, n]`, `b: [n]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (m, k) = self.value(x).dims2("linear")?;
        let (k2, n) = self.value(w).dims2("linear")?;
        if k != k2 {
            return Err(Error::shape(
                "linear",
                format!("input features {k} vs weight rows {k2}"),
            ));
        }
        let mut out = vec![T::zero(); m * n];
        if let Some(b) = b {
            let bias = self.value(b);
            if bias.shape() != [n] {
                return Err(Error::shape(
                    "linear",
                    format!("bias {:?} for {n} outputs", bias.shape()),
                ));
            }
            for row in out.chunks_mut(n) {
                row.copy_from_slice(bias.data());
            }
        }
        let beta = if b.is_some() { T::one() } else { T::zero() };
        gemm(
            false,
            false,
            m,
            n,
            k,
            T::one(),
            self.value(x).data(),
            self.value(w).data(),
            beta,
            &mut out,
        );
        let rg = self.any_grad(&[x, w]) || b.is_some_and(|b| self.requires_grad(b));
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::Linear { x, w, b }, rg))
    }

    fn zip(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        self.same_shape(op, a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(va.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip("add", a, b, |x, y| x + y)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip("sub", a, b, |x, y| x - y)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip("mul", a, b, |x, y| x * y)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    /// Adds `pattern` repeated along the flattened data of `x`.
    pub fn add_tiled(&mut self, x: Var, pattern: Var) -> Result<Var> {
        let (vx, vp) = (self.value(x), self.value(pattern));
        let p = vp.len();
        if vx.len() % p != 0 {
            return Err(Error::shape(
                "add_tiled",
                format!("pattern of {p} does not tile {:?}", vx.shape()),
            ));
        }
        let data = vx
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + vp.data()[i % p])
            .collect();
        let value = Tensor::new(vx.shape(), data)?;
        let rg = self.any_grad(&[x, pattern]);
        Ok(self.push(value, Op::AddTiled { x, pattern }, rg))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let value = self.value(x).map(|v| v * c);
        let rg = self.requires_grad(x);
        self.push(value, Op::Scale { x, c }, rg)
    }

    /// `x * s` where `s` is a single-element tensor.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(Error::shape(
                "mul_scalar",
                format!("scalar operand has shape {:?}", self.shape(s)),
            ));
        }
        let sv = self.value(s).data()[0];
        let value = self.value(x).map(|v| v * sv);
        let rg = self.any_grad(&[x, s]);
        Ok(self.push(value, Op::MulScalar { x, s }, rg))
    }

    pub fn unary(&mut self, x: Var, f: Unary) -> Var {
        let value = self.value(x).map(|v| f.apply(v));
        let rg = self.requires_grad(x);
        self.push(value, Op::Unary { x, f }, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Relu)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        let rg = self.requires_grad(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s: T = v.data().iter().copied().sum();
        let m = s / T::of(v.len() as f64);
        let rg = self.requires_grad(x);
        self.push(Tensor::scalar(m), Op::Mean(x), rg)
    }

    /// `sum(a ⊙ b)`.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let p = self.mul(a, b)?;
        Ok(self.sum(p))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        let rg = self.requires_grad(x);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// `[B, R, C] -> [B, C, R]`.
    pub fn swap_last2(&mut self, x: Var) -> Result<Var> {
        let (outer, rows, cols) = self.value(x).dims3("swap_last2")?;
        let src = self.value(x).data();
        let mut out = vec![T::zero(); src.len()];
        transpose_blocks(src, &mut out, outer, rows, cols);
        let value = Tensor::new(&[outer, cols, rows], out)?;
        let rg = self.requires_grad(x);
        Ok(self.push(
            value,
            Op::SwapLast2 {
                x,
                outer,
                rows,
                cols,
            },
            rg,
        ))
    }

    /// Same-padded, stride-1 1-D convolution.
    ///
    /// `x: [B, C_in, L]`, `w: [C_out, C_in, K]` with odd `K`, `b: [C_out]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (batch, c_in, len) = self.value(x).dims3("conv1d")?;
        let (c_out, w_in, k) = self.value(w).dims3("conv1d")?;
        if w_in != c_in {
            return Err(Error::shape(
                "conv1d",
                format!("input channels: input has {c_in}, kernels expect {w_in}"),
            ));
        }
        if k % 2 == 0 {
            return Err(Error::shape(
                "conv1d",
                format!("kernel width {k} must be odd for same padding"),
            ));
        }
        if let Some(b) = b {
            if self.shape(b) != [c_out] {
                return Err(Error::shape(
                    "conv1d",
                    format!("output channels: bias {:?} vs {c_out} kernels", self.shape(b)),
                ));
            }
        }
        let pad = k / 2;
        let rows = batch * len;
        let width = c_in * k;
        let xs = self.value(x).data();
        let mut cols = vec![T::zero(); rows * width];
        for bi in 0..batch {
            for c in 0..c_in {
                let src = &xs[(bi * c_in + c) * len..][..len];
                for t in 0..len {
                    let row = &mut cols[(bi * len + t) * width + c * k..][..k];
                    for (j, slot) in row.iter_mut().enumerate() {
                        let s = t + j;
                        if s >= pad && s - pad < len {
                            *slot = src[s - pad];
                        }
                    }
                }
            }
        }
        let mut y = vec![T::zero(); rows * c_out];
        gemm(
            false,
            true,
            rows,
            c_out,
            width,
            T::one(),
            &cols,
            self.value(w).data(),
            T::zero(),
            &mut y,
        );
        let bias = b.map(|b| self.value(b).data());
        let mut out = vec![T::zero(); batch * c_out * len];
        for bi in 0..batch {
            for o in 0..c_out {
                let bo = bias.map_or(T::zero(), |bb| bb[o]);
                let dst = &mut out[(bi * c_out + o) * len..][..len];
                for (t, d) in dst.iter_mut().enumerate() {
                    *d = y[(bi * len + t) * c_out + o] + bo;
                }
            }
        }
        let value = Tensor::new(&[batch, c_out, len], out)?;
        let rg = self.any_grad(&[x, w]) || b.is_some_and(|b| self.requires_grad(b));
        let needs_cols = self.requires_grad(w);
        Ok(self.push(
            value,
            Op::Conv1d {
                x,
                w,
                b,
                cols: if needs_cols { cols } else { Vec::new() },
                batch,
                c_in,
                len,
                c_out,
                k,
            },
            rg,
        ))
    }

    /// Per-channel normalization of `x: [B, C, L]`.
    ///
    /// With `train` set, batch statistics are used and `stats` is updated by
    /// an exponential moving average; otherwise `stats` is used as is.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut RunningStats<T>,
        train: bool,
    ) -> Result<Var> {
        let (batch, ch, len) = self.value(x).dims3("batch_norm")?;
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(v) != [ch] {
                return Err(Error::shape(
                    "batch_norm",
                    format!("{name} {:?} for {ch} channels", self.shape(v)),
                ));
            }
        }
        if stats.mean.shape() != [ch] || stats.var.shape() != [ch] {
            return Err(Error::shape("batch_norm", "running stats channel count"));
        }
        let count = batch * len;
        if train && count < 2 {
            return Err(Error::shape(
                "batch_norm",
                "training mode needs at least two values per channel",
            ));
        }
        let eps = T::of(BATCH_NORM_EPS);
        let xs = self.value(x).data();
        let (g, bt) = (self.value(gamma).data(), self.value(beta).data());
        let mut inv_std = vec![T::zero(); ch];
        let mut means = vec![T::zero(); ch];
        if train {
            let n = T::of(count as f64);
            let mut new_mean = stats.mean.data().to_vec();
            let mut new_var = stats.var.data().to_vec();
            let mom = T::of(BATCH_NORM_MOMENTUM);
            for c in 0..ch {
                let mut s = T::zero();
                for bi in 0..batch {
                    s = s + xs[(bi * ch + c) * len..][..len].iter().copied().sum::<T>();
                }
                let mu = s / n;
                let mut ss = T::zero();
                for bi in 0..batch {
                    for &v in &xs[(bi * ch + c) * len..][..len] {
                        ss = ss + (v - mu) * (v - mu);
                    }
                }
                let var = ss / n;
                means[c] = mu;
                inv_std[c] = T::one() / (var + eps).sqrt();
                let unbiased = ss / T::of((count - 1) as f64);
                new_mean[c] = (T::one() - mom) * new_mean[c] + mom * mu;
                new_var[c] = (T::one() - mom) * new_var[c] + mom * unbiased;
            }
            stats.mean = Tensor::new(&[ch], new_mean)?;
            stats.var = Tensor::new(&[ch], new_var)?;
        } else {
            for c in 0..ch {
                means[c] = stats.mean.data()[c];
                inv_std[c] = T::one() / (stats.var.data()[c] + eps).sqrt();
            }
        }
        let mut xhat = vec![T::zero(); xs.len()];
        let mut out = vec![T::zero(); xs.len()];
        for bi in 0..batch {
            for c in 0..ch {
                let off = (bi * ch + c) * len;
                for t in 0..len {
                    let h = (xs[off + t] - means[c]) * inv_std[c];
                    xhat[off + t] = h;
                    out[off + t] = g[c] * h + bt[c];
                }
            }
        }
        let value = Tensor::new(&[batch, ch, len], out)?;
        let rg = self.any_grad(&[x, gamma, beta]);
        Ok(self.push(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat: if rg { xhat } else { Vec::new() },
                inv_std,
                batch_stats: train,
            },
            rg,
        ))
    }

    /// Normalizes over the last axis of `x`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().unwrap();
        if d < 2 {
            return Err(Error::shape("layer_norm", "normalized axis needs at least 2 values"));
        }
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(v) != [d] {
                return Err(Error::shape(
                    "layer_norm",
                    format!("{name} {:?} for feature size {d}", self.shape(v)),
                ));
            }
        }
        let eps = T::of(LAYER_NORM_EPS);
        let n = T::of(d as f64);
        let xs = self.value(x).data();
        let (g, bt) = (self.value(gamma).data(), self.value(beta).data());
        let rows = xs.len() / d;
        let mut xhat = vec![T::zero(); xs.len()];
        let mut out = vec![T::zero(); xs.len()];
        let mut inv_std = vec![T::zero(); rows];
        for r in 0..rows {
            let row = &xs[r * d..][..d];
            let mu = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / n;
            let is = T::one() / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let h = (row[j] - mu) * is;
                xhat[r * d + j] = h;
                out[r * d + j] = g[j] * h + bt[j];
            }
        }
        let value = Tensor::new(&shape, out)?;
        let rg = self.any_grad(&[x, gamma, beta]);
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat: if rg { xhat } else { Vec::new() },
                inv_std,
            },
            rg,
        ))
    }

    /// Multiplies by a precomputed mask (entries `0` or `1/(1-p)`).
    pub fn dropout(&mut self, x: Var, mask: Vec<T>) -> Result<Var> {
        if mask.len() != self.value(x).len() {
            return Err(Error::shape("dropout", "mask length"));
        }
        let value = {
            let v = self.value(x);
            let data = v.data().iter().zip(&mask).map(|(&a, &m)| a * m).collect();
            Tensor::new(v.shape(), data)?
        };
        let rg = self.requires_grad(x);
        Ok(self.push(value, Op::Dropout { x, mask }, rg))
    }

    /// Scaled dot-product attention for `batch` sequences stacked row-wise.
    ///
    /// `q, k, v: [batch * T, D]`; the `D` columns are split into `heads`
    /// contiguous groups. Output has the same shape as `q`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, batch: usize, heads: usize) -> Result<Var> {
        self.same_shape("attention", q, k)?;
        self.same_shape("attention", q, v)?;
        let (rows, d) = self.value(q).dims2("attention")?;
        if heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!(
                "model width {d} is not divisible by {heads} heads"
            )));
        }
        if batch == 0 || rows % batch != 0 {
            return Err(Error::shape(
                "attention",
                format!("{rows} rows do not split into {batch} sequences"),
            ));
        }
        let t = rows / batch;
        let dh = d / heads;
        let scale = T::one() / T::of(dh as f64).sqrt();
        let (qs, ks, vs) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut probs = vec![T::zero(); batch * heads * t * t];
        let mut out = vec![T::zero(); rows * d];
        for b in 0..batch {
            for h in 0..heads {
                let p = &mut probs[(b * heads + h) * t * t..][..t * t];
                for i in 0..t {
                    let qi = &qs[(b * t + i) * d + h * dh..][..dh];
                    let mut mx = T::neg_infinity();
                    for j in 0..t {
                        let kj = &ks[(b * t + j) * d + h * dh..][..dh];
                        let s = qi.iter().zip(kj).map(|(&a, &c)| a * c).sum::<T>() * scale;
                        p[i * t + j] = s;
                        mx = mx.max(s);
                    }
                    let mut z = T::zero();
                    for j in 0..t {
                        let e = (p[i * t + j] - mx).exp();
                        p[i * t + j] = e;
                        z = z + e;
                    }
                    for j in 0..t {
                        p[i * t + j] = p[i * t + j] / z;
                    }
                    let oi = &mut out[(b * t + i) * d + h * dh..][..dh];
                    for j in 0..t {
                        let w = p[i * t + j];
                        let vj = &vs[(b * t + j) * d + h * dh..][..dh];
                        for (o, &vv) in oi.iter_mut().zip(vj) {
                            *o = *o + w * vv;
                        }
                    }
                }
            }
        }
        let value = Tensor::new(&[rows, d], out)?;
        let rg = self.any_grad(&[q, k, v]);
        Ok(self.push(
            value,
            Op::Attention {
                q,
                k,
                v,
                batch,
                heads,
                probs,
            },
            rg,
        ))
    }

    /// Gathers rows of a 2-D tensor.
    pub fn select_rows(&mut self, x: Var, rows: Vec<usize>) -> Result<Var> {
        let (n, d) = self.value(x).dims2("select_rows")?;
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::shape("select_rows", format!("row {bad} of {n}")));
        }
        if rows.is_empty() {
            return Err(Error::shape("select_rows", "no rows selected"));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(rows.len() * d);
        for &r in &rows {
            out.extend_from_slice(&src[r * d..][..d]);
        }
        let value = Tensor::new(&[rows.len(), d], out)?;
        let rg = self.requires_grad(x);
        Ok(self.push(value, Op::SelectRows { x, rows }, rg))
    }

    /// Euclidean norm of consecutive groups of `group` values along the last axis.
    pub fn point_norm(&mut self, x: Var, group: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let last = *shape.last().unwrap();
        if group == 0 || last % group != 0 {
            return Err(Error::shape(
                "point_norm",
                format!("last axis {last} is not a multiple of {group}"),
            ));
        }
        let data: Vec<T> = self
            .value(x)
            .data()
            .chunks(group)
            .map(|p| p.iter().map(|&v| v * v).sum::<T>().sqrt())
            .collect();
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = last / group;
        let value = Tensor::new(&out_shape, data)?;
        let rg = self.requires_grad(x);
        Ok(self.push(value, Op::PointNorm { x, group }, rg))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| match (g, n.requires_grad) {
                (Some(g), true) => Some(Tensor::new(n.value.shape(), g).expect("gradient shape")),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let mut acc = |v: Var, delta: Vec<T>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => {
                    for (e, d) in existing.iter_mut().zip(delta) {
                        *e = *e + d;
                    }
                }
                slot @ None => *slot = Some(delta),
            }
        };
        let val = |v: Var| self.nodes[v.0].value.data();
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if rg(*a) {
                    let mut da = vec![T::zero(); m * k];
                    gemm(false, true, m, k, n, T::one(), g, val(*b), T::zero(), &mut da);
                    acc(*a, da);
                }
                if rg(*b) {
                    let mut db = vec![T::zero(); k * n];
                    gemm(true, false, k, n, m, T::one(), val(*a), g, T::zero(), &mut db);
                    acc(*b, db);
                }
            }
            Op::Linear { x, w, b } => {
                let (m, k) = (self.shape(*x)[0], self.shape(*x)[1]);
                let n = self.shape(*w)[1];
                if rg(*x) {
                    let mut dx = vec![T::zero(); m * k];
                    gemm(false, true, m, k, n, T::one(), g, val(*w), T::zero(), &mut dx);
                    acc(*x, dx);
                }
                if rg(*w) {
                    let mut dw = vec![T::zero(); k * n];
                    gemm(true, false, k, n, m, T::one(), val(*x), g, T::zero(), &mut dw);
                    acc(*w, dw);
                }
                if let Some(b) = b {
                    if rg(*b) {
                        let mut db = vec![T::zero(); n];
                        for row in g.chunks(n) {
                            for (d, &v) in db.iter_mut().zip(row) {
                                *d = *d + v;
                            }
                        }
                        acc(*b, db);
                    }
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.iter().map(|&v| -v).collect());
            }
            Op::Mul(a, b) => {
                if rg(*a) {
                    acc(*a, g.iter().zip(val(*b)).map(|(&u, &v)| u * v).collect());
                }
                if rg(*b) {
                    acc(*b, g.iter().zip(val(*a)).map(|(&u, &v)| u * v).collect());
                }
            }
            Op::AddTiled { x, pattern } => {
                acc(*x, g.to_vec());
                if rg(*pattern) {
                    let p = self.nodes[pattern.0].value.len();
                    let mut dp = vec![T::zero(); p];
                    for (i, &v) in g.iter().enumerate() {
                        dp[i % p] = dp[i % p] + v;
                    }
                    acc(*pattern, dp);
                }
            }
            Op::Scale { x, c } => acc(*x, g.iter().map(|&v| v * *c).collect()),
            Op::MulScalar { x, s } => {
                let sv = val(*s)[0];
                if rg(*x) {
                    acc(*x, g.iter().map(|&v| v * sv).collect());
                }
                if rg(*s) {
                    let ds = g.iter().zip(val(*x)).map(|(&u, &v)| u * v).sum();
                    acc(*s, vec![ds]);
                }
            }
            Op::Unary { x, f } => acc(
                *x,
                g.iter().zip(val(*x)).map(|(&u, &v)| u * f.derivative(v)).collect(),
            ),
            Op::Sum(x) => acc(*x, vec![g[0]; self.nodes[x.0].value.len()]),
            Op::Mean(x) => {
                let n = self.nodes[x.0].value.len();
                acc(*x, vec![g[0] / T::of(n as f64); n]);
            }
            Op::Reshape(x) => acc(*x, g.to_vec()),
            Op::SwapLast2 {
                x,
                outer,
                rows,
                cols,
            } => {
                let mut dx = vec![T::zero(); g.len()];
                transpose_blocks(g, &mut dx, *outer, *cols, *rows);
                acc(*x, dx);
            }
            Op::Conv1d {
                x,
                w,
                b,
                cols,
                batch,
                c_in,
                len,
                c_out,
                k,
            } => {
                let (batch, c_in, len, c_out, k) = (*batch, *c_in, *len, *c_out, *k);
                let rows = batch * len;
                let width = c_in * k;
                let pad = k / 2;
                // Upstream gradient as [B*L, C_out].
                let mut gy = vec![T::zero(); rows * c_out];
                for bi in 0..batch {
                    for o in 0..c_out {
                        let src = &g[(bi * c_out + o) * len..][..len];
                        for (t, &v) in src.iter().enumerate() {
                            gy[(bi * len + t) * c_out + o] = v;
                        }
                    }
                }
                if let Some(b) = b {
                    if rg(*b) {
                        let mut db = vec![T::zero(); c_out];
                        for row in gy.chunks(c_out) {
                            for (d, &v) in db.iter_mut().zip(row) {
                                *d = *d + v;
                            }
                        }
                        acc(*b, db);
                    }
                }
                if rg(*w) {
                    let mut dw = vec![T::zero(); c_out * width];
                    gemm(true, false, c_out, width, rows, T::one(), &gy, cols, T::zero(), &mut dw);
                    acc(*w, dw);
                }
                if rg(*x) {
                    let mut dcols = vec![T::zero(); rows * width];
                    gemm(false, false, rows, width, c_out, T::one(), &gy, val(*w), T::zero(), &mut dcols);
                    let mut dx = vec![T::zero(); batch * c_in * len];
                    for bi in 0..batch {
                        for c in 0..c_in {
                            let dst = &mut dx[(bi * c_in + c) * len..][..len];
                            for t in 0..len {
                                let row = &dcols[(bi * len + t) * width + c * k..][..k];
                                for (j, &v) in row.iter().enumerate() {
                                    let s = t + j;
                                    if s >= pad && s - pad < len {
                                        dst[s - pad] = dst[s - pad] + v;
                                    }
                                }
                            }
                        }
                    }
                    acc(*x, dx);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let shape = self.shape(*x);
                let (batch, ch, len) = (shape[0], shape[1], shape[2]);
                let gm = val(*gamma);
                let mut dg = vec![T::zero(); ch];
                let mut db = vec![T::zero(); ch];
                for bi in 0..batch {
                    for c in 0..ch {
                        let off = (bi * ch + c) * len;
                        for t in 0..len {
                            dg[c] = dg[c] + g[off + t] * xhat[off + t];
                            db[c] = db[c] + g[off + t];
                        }
                    }
                }
                if rg(*x) {
                    let mut dx = vec![T::zero(); g.len()];
                    let n = T::of((batch * len) as f64);
                    for c in 0..ch {
                        // sum(dxhat) = gamma*db, sum(dxhat*xhat) = gamma*dg
                        let coef = gm[c] * inv_std[c];
                        for bi in 0..batch {
                            let off = (bi * ch + c) * len;
                            for t in 0..len {
                                dx[off + t] = if *batch_stats {
                                    coef * (g[off + t] - db[c] / n - xhat[off + t] * dg[c] / n)
                                } else {
                                    coef * g[off + t]
                                };
                            }
                        }
                    }
                    acc(*x, dx);
                }
                acc(*gamma, dg);
                acc(*beta, db);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let d = self.nodes[gamma.0].value.len();
                let gm = val(*gamma);
                let mut dg = vec![T::zero(); d];
                let mut db = vec![T::zero(); d];
                let mut dx = vec![T::zero(); g.len()];
                let n = T::of(d as f64);
                for (r, is) in inv_std.iter().enumerate() {
                    let gr = &g[r * d..][..d];
                    let hr = &xhat[r * d..][..d];
                    let mut s1 = T::zero();
                    let mut s2 = T::zero();
                    for j in 0..d {
                        dg[j] = dg[j] + gr[j] * hr[j];
                        db[j] = db[j] + gr[j];
                        let dh = gr[j] * gm[j];
                        s1 = s1 + dh;
                        s2 = s2 + dh * hr[j];
                    }
                    for j in 0..d {
                        let dh = gr[j] * gm[j];
                        dx[r * d + j] = *is * (dh - s1 / n - hr[j] * s2 / n);
                    }
                }
                acc(*x, dx);
                acc(*gamma, dg);
                acc(*beta, db);
            }
            Op::Dropout { x, mask } => acc(*x, g.iter().zip(mask).map(|(&u, &m)| u * m).collect()),
            Op::Attention {
                q,
                k,
                v,
                batch,
                heads,
                probs,
            } => {
                let (rows, d) = (self.shape(*q)[0], self.shape(*q)[1]);
                let (batch, heads) = (*batch, *heads);
                let t = rows / batch;
                let dh = d / heads;
                let scale = T::one() / T::of(dh as f64).sqrt();
                let (qs, ks, vs) = (val(*q), val(*k), val(*v));
                let mut dq = vec![T::zero(); rows * d];
                let mut dk = vec![T::zero(); rows * d];
                let mut dv = vec![T::zero(); rows * d];
                let mut dp = vec![T::zero(); t * t];
                for b in 0..batch {
                    for h in 0..heads {
                        let p = &probs[(b * heads + h) * t * t..][..t * t];
                        for i in 0..t {
                            let gi = &g[(b * t + i) * d + h * dh..][..dh];
                            for j in 0..t {
                                let vj = &vs[(b * t + j) * d + h * dh..][..dh];
                                dp[i * t + j] = gi.iter().zip(vj).map(|(&a, &c)| a * c).sum();
                                let w = p[i * t + j];
                                let dvj = &mut dv[(b * t + j) * d + h * dh..][..dh];
                                for (o, &gv) in dvj.iter_mut().zip(gi) {
                                    *o = *o + w * gv;
                                }
                            }
                        }
                        for i in 0..t {
                            let row_dot: T = (0..t).map(|j| p[i * t + j] * dp[i * t + j]).sum();
                            for j in 0..t {
                                let ds = p[i * t + j] * (dp[i * t + j] - row_dot) * scale;
                                if ds == T::zero() {
                                    continue;
                                }
                                let qo = (b * t + i) * d + h * dh;
                                let ko = (b * t + j) * d + h * dh;
                                for c in 0..dh {
                                    dq[qo + c] = dq[qo + c] + ds * ks[ko + c];
                                    dk[ko + c] = dk[ko + c] + ds * qs[qo + c];
                                }
                            }
                        }
                    }
                }
                acc(*q, dq);
                acc(*k, dk);
                acc(*v, dv);
            }
            Op::SelectRows { x, rows } => {
                let d = self.shape(*x)[1];
                let mut dx = vec![T::zero(); self.nodes[x.0].value.len()];
                for (i, &r) in rows.iter().enumerate() {
                    for c in 0..d {
                        dx[r * d + c] = dx[r * d + c] + g[i * d + c];
                    }
                }
                acc(*x, dx);
            }
            Op::PointNorm { x, group } => {
                let xs = val(*x);
                let norms = node.value.data();
                let mut dx = vec![T::zero(); xs.len()];
                for (i, (&gn, &nrm)) in g.iter().zip(norms).enumerate() {
                    if nrm > T::zero() {
                        for j in 0..*group {
                            dx[i * group + j] = gn * xs[i * group + j] / nrm;
                        }
                    }
                }
                acc(*x, dx);
            }
        }
    }
}

/// Transposes `outer` consecutive `rows x cols` blocks.
fn transpose_blocks<T: Copy>(src: &[T], dst: &mut [T], outer: usize, rows: usize, cols: usize) {
    for o in 0..outer {
        let s = &src[o * rows * cols..][..rows * cols];
        let d = &mut dst[o * rows * cols..][..rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                d[c * rows + r] = s[r * cols + c];
            }
        }
    }
}
