use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use super::conv::{col2im_add, im2col, ConvGeom};
use super::{Result, Scalar, Tensor, TensorError};

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    graph: u64,
    index: usize,
}

impl Var {
    pub fn index(&self) -> usize {
        self.index
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvParams {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Default for ConvParams {
    fn default() -> Self {
        Self { stride: 1, padding: 0, groups: 1 }
    }
}

/// Normalization statistics source for [`Graph::batchnorm2d`].
#[derive(Clone, Copy, Debug)]
pub enum BnMode<'a, T> {
    /// Normalize with batch statistics; the op reports them for running-average updates.
    Train,
    /// Normalize with fixed running statistics.
    Eval { mean: &'a [T], var: &'a [T] },
}

/// Per-channel batch statistics observed in train mode. `var` is unbiased.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

enum Op<T> {
    Leaf,
    Conv2d { input: usize, kernel: usize, bias: Option<usize>, params: ConvParams },
    Pow { input: usize, q: u32 },
    Tanh { input: usize },
    BatchNorm { input: usize, gamma: usize, beta: usize, xhat: Vec<T>, inv_std: Vec<T>, train: bool },
    MaxPool { input: usize, argmax: Vec<usize> },
    AdaptiveAvg { input: usize, out_h: usize, out_w: usize },
    Affine { input: usize, weight: usize, bias: usize },
    Dropout { input: usize, mask: Vec<T> },
    SoftmaxCe { logits: usize, probs: Vec<T>, targets: Vec<usize> },
    Add { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { input: usize, factor: T },
    Concat { inputs: Vec<usize> },
    Reshape { input: usize },
    Sum { input: usize },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

/// Ordered record of executed operations.
///
/// Node order is execution order, which is a topological order, so backward is a
/// single reverse sweep.
pub struct Graph<T> {
    id: u64,
    nodes: Vec<Node<T>>,
    backward_done: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn adaptive_bin(i: usize, len: usize, bins: usize) -> (usize, usize) {
    (i * len / bins, (i + 1) * len / bins)
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed), nodes: Vec::new(), backward_done: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.graph != self.id || v.index >= self.nodes.len() {
            return Err(TensorError::DetachedGraph);
        }
        Ok(v.index)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        let index = self.nodes.len();
        self.nodes.push(Node { value, op, requires_grad, grad: None });
        Var { graph: self.id, index }
    }

    fn any_grad(&self, idx: &[usize]) -> bool {
        idx.iter().any(|&i| self.nodes[i].requires_grad)
    }

    /// Record a leaf tensor.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Constant input (no gradient).
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> Result<&Tensor<T>> {
        let i = self.check(v)?;
        Ok(&self.nodes[i].value)
    }

    pub fn shape(&self, v: Var) -> Result<&[usize]> {
        Ok(self.value(v)?.shape())
    }

    /// Accumulated gradient of `v`; zeros when nothing flowed into it.
    pub fn grad(&self, v: Var) -> Result<Tensor<T>> {
        let i = self.check(v)?;
        let node = &self.nodes[i];
        let data = node.grad.clone().unwrap_or_else(|| vec![T::zero(); node.value.numel()]);
        Tensor::new(node.value.shape().to_vec(), data)
    }

    /// Clear accumulated gradients and re-arm backward.
    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.backward_done = false;
    }

    // ---- operations -------------------------------------------------------

    /// Grouped 2-D cross-correlation with zero padding.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Option<Var>, params: ConvParams) -> Result<Var> {
        let (xi, ki) = (self.check(input)?, self.check(kernel)?);
        let bi = bias.map(|b| self.check(b)).transpose()?;
        let ConvParams { stride, padding, groups } = params;
        if stride == 0 {
            return Err(TensorError::Parameter("conv2d stride must be positive".into()));
        }
        if groups == 0 {
            return Err(TensorError::Parameter("conv2d groups must be positive".into()));
        }
        let [n, c, h, w] = self.nodes[xi].value.dims4()?;
        let [f, cg, kh, kw] = self.nodes[ki].value.dims4()?;
        if c % groups != 0 || f % groups != 0 {
            return Err(TensorError::Dimension(format!("channels {c} / filters {f} not divisible by groups {groups}")));
        }
        if cg != c / groups {
            return Err(TensorError::Dimension(format!("kernel has {cg} channels per group, input needs {}", c / groups)));
        }
        if h + 2 * padding < kh || w + 2 * padding < kw || kh == 0 || kw == 0 {
            return Err(TensorError::Dimension(format!("kernel {kh}x{kw} larger than padded input {h}x{w}+{padding}")));
        }
        if let Some(b) = bi {
            if self.nodes[b].value.shape() != [f] {
                return Err(TensorError::Dimension(format!("bias shape {:?}, expected [{f}]", self.nodes[b].value.shape())));
            }
        }
        let out_h = (h + 2 * padding - kh) / stride + 1;
        let out_w = (w + 2 * padding - kw) / stride + 1;
        let geom = ConvGeom { channels: cg, height: h, width: w, kh, kw, stride, padding, out_h, out_w };
        let fg = f / groups;
        let (rows, ncols) = (geom.col_rows(), geom.col_cols());
        let x = self.nodes[xi].value.data();
        let k = self.nodes[ki].value.data();
        let mut out = vec![T::zero(); n * f * ncols];
        let mut cols = if geom.is_pointwise() { Vec::new() } else { vec![T::zero(); rows * ncols] };
        for s in 0..n {
            for g in 0..groups {
                let x_g = &x[(s * c + g * cg) * h * w..(s * c + (g + 1) * cg) * h * w];
                let b_mat: &[T] = if geom.is_pointwise() {
                    x_g
                } else {
                    im2col(x_g, &geom, &mut cols);
                    &cols
                };
                let k_g = &k[g * fg * rows..(g + 1) * fg * rows];
                let o = &mut out[(s * f + g * fg) * ncols..(s * f + (g + 1) * fg) * ncols];
                T::gemm(fg, rows, ncols, k_g, false, b_mat, false, o, false);
            }
        }
        if let Some(b) = bi {
            let bias = self.nodes[b].value.data();
            for (plane, &bv) in out.chunks_mut(ncols).zip(bias.iter().cycle()) {
                plane.iter_mut().for_each(|v| *v += bv);
            }
        }
        let mut parents = vec![xi, ki];
        parents.extend(bi);
        let rg = self.any_grad(&parents);
        let value = Tensor::new(vec![n, f, out_h, out_w], out)?;
        Ok(self.push(value, Op::Conv2d { input: xi, kernel: ki, bias: bi, params }, rg))
    }

    /// Elementwise `x^q` by repeated multiplication.
    pub fn pow(&mut self, input: Var, q: u32) -> Result<Var> {
        let xi = self.check(input)?;
        if q == 0 {
            return Err(TensorError::Parameter("power order must be at least 1".into()));
        }
        let value = self.nodes[xi].value.map(|v| int_pow(v, q));
        let rg = self.nodes[xi].requires_grad;
        Ok(self.push(value, Op::Pow { input: xi, q }, rg))
    }

    pub fn tanh(&mut self, input: Var) -> Result<Var> {
        let xi = self.check(input)?;
        let value = self.nodes[xi].value.map(|v| v.tanh());
        let rg = self.nodes[xi].requires_grad;
        Ok(self.push(value, Op::Tanh { input: xi }, rg))
    }

    /// Per-channel batch normalization of an `[N, C, H, W]` tensor.
    pub fn batchnorm2d(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        mode: BnMode<'_, T>,
        eps: T,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        let (xi, gi, bi) = (self.check(input)?, self.check(gamma)?, self.check(beta)?);
        if eps <= T::zero() {
            return Err(TensorError::Parameter("batchnorm epsilon must be positive".into()));
        }
        let [n, c, h, w] = self.nodes[xi].value.dims4()?;
        if self.nodes[gi].value.shape() != [c] || self.nodes[bi].value.shape() != [c] {
            return Err(TensorError::Dimension(format!("batchnorm affine params must have shape [{c}]")));
        }
        let m = n * h * w;
        if m == 0 {
            return Err(TensorError::Dimension("batchnorm over an empty batch".into()));
        }
        let plane = h * w;
        let x = self.nodes[xi].value.data();
        let (mean, var, stats) = match mode {
            BnMode::Train => {
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                let mf = T::from_f64(m as f64);
                for ch in 0..c {
                    let mut s = T::zero();
                    for b in 0..n {
                        s += x[(b * c + ch) * plane..(b * c + ch + 1) * plane].iter().copied().sum::<T>();
                    }
                    let mu = s / mf;
                    let mut sq = T::zero();
                    for b in 0..n {
                        for &v in &x[(b * c + ch) * plane..(b * c + ch + 1) * plane] {
                            sq += (v - mu) * (v - mu);
                        }
                    }
                    mean[ch] = mu;
                    var[ch] = sq / mf;
                }
                let unbiased = if m > 1 {
                    var.iter().map(|&v| v * mf / T::from_f64((m - 1) as f64)).collect()
                } else {
                    var.clone()
                };
                let stats = BatchStats { mean: mean.clone(), var: unbiased };
                (mean, var, Some(stats))
            }
            BnMode::Eval { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(TensorError::Dimension(format!("running stats must have {c} channels")));
                }
                (mean.to_vec(), var.to_vec(), None)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let gamma_v = self.nodes[gi].value.data();
        let beta_v = self.nodes[bi].value.data();
        let mut xhat = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        for b in 0..n {
            for ch in 0..c {
                let r = (b * c + ch) * plane..(b * c + ch + 1) * plane;
                for ((xh, o), &v) in xhat[r.clone()].iter_mut().zip(&mut out[r.clone()]).zip(&x[r]) {
                    *xh = (v - mean[ch]) * inv_std[ch];
                    *o = gamma_v[ch] * *xh + beta_v[ch];
                }
            }
        }
        let rg = self.any_grad(&[xi, gi, bi]);
        let value = Tensor::new(vec![n, c, h, w], out)?;
        let train = stats.is_some();
        let v = self.push(value, Op::BatchNorm { input: xi, gamma: gi, beta: bi, xhat, inv_std, train }, rg);
        Ok((v, stats))
    }

    /// Non-overlapping `size × size` max pooling (stride = size, floor).
    pub fn max_pool2d(&mut self, input: Var, size: usize) -> Result<Var> {
        let xi = self.check(input)?;
        let [n, c, h, w] = self.nodes[xi].value.dims4()?;
        if size == 0 || size > h || size > w {
            return Err(TensorError::Parameter(format!("max-pool window {size} does not fit {h}x{w}")));
        }
        let (oh, ow) = (h / size, w / size);
        let x = self.nodes[xi].value.data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for p in 0..n * c {
            let base = p * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + oy * size * w + ox * size;
                    for dy in 0..size {
                        for dx in 0..size {
                            let idx = base + (oy * size + dy) * w + ox * size + dx;
                            if x[idx] > x[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best);
                }
            }
        }
        let rg = self.nodes[xi].requires_grad;
        let value = Tensor::new(vec![n, c, oh, ow], out)?;
        Ok(self.push(value, Op::MaxPool { input: xi, argmax }, rg))
    }

    /// Average over a near-equal partition of each spatial axis into `out_h × out_w` bins.
    pub fn adaptive_avg_pool2d(&mut self, input: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let xi = self.check(input)?;
        let [n, c, h, w] = self.nodes[xi].value.dims4()?;
        if out_h == 0 || out_w == 0 {
            return Err(TensorError::Parameter("adaptive pool target must be at least 1".into()));
        }
        if out_h > h || out_w > w {
            return Err(TensorError::Parameter(format!("adaptive pool target {out_h}x{out_w} exceeds input {h}x{w}")));
        }
        let x = self.nodes[xi].value.data();
        let mut out = Vec::with_capacity(n * c * out_h * out_w);
        for p in 0..n * c {
            let base = p * h * w;
            for by in 0..out_h {
                let (y0, y1) = adaptive_bin(by, h, out_h);
                for bx in 0..out_w {
                    let (x0, x1) = adaptive_bin(bx, w, out_w);
                    let mut s = T::zero();
                    for y in y0..y1 {
                        s += x[base + y * w + x0..base + y * w + x1].iter().copied().sum::<T>();
                    }
                    out.push(s / T::from_f64(((y1 - y0) * (x1 - x0)) as f64));
                }
            }
        }
        let rg = self.nodes[xi].requires_grad;
        let value = Tensor::new(vec![n, c, out_h, out_w], out)?;
        Ok(self.push(value, Op::AdaptiveAvg { input: xi, out_h, out_w }, rg))
    }

    /// `input · weightᵀ + bias` for `input: [N, D]`, `weight: [K, D]`, `bias: [K]`.
    pub fn affine(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (xi, wi, bi) = (self.check(input)?, self.check(weight)?, self.check(bias)?);
        let [n, d] = self.nodes[xi].value.dims2()?;
        let [k, wd] = self.nodes[wi].value.dims2()?;
        if wd != d || self.nodes[bi].value.shape() != [k] {
            return Err(TensorError::Dimension(format!(
                "affine: input [{n},{d}], weight {:?}, bias {:?}",
                self.nodes[wi].value.shape(),
                self.nodes[bi].value.shape()
            )));
        }
        let mut out = vec![T::zero(); n * k];
        T::gemm(n, d, k, self.nodes[xi].value.data(), false, self.nodes[wi].value.data(), true, &mut out, false);
        let b = self.nodes[bi].value.data();
        for row in out.chunks_mut(k) {
            row.iter_mut().zip(b).for_each(|(o, &bv)| *o += bv);
        }
        let rg = self.any_grad(&[xi, wi, bi]);
        let value = Tensor::new(vec![n, k], out)?;
        Ok(self.push(value, Op::Affine { input: xi, weight: wi, bias: bi }, rg))
    }

    /// Inverted dropout. Identity in eval mode or when `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, input: Var, p: f64, train: bool, rng: &mut R) -> Result<Var> {
        let xi = self.check(input)?;
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::Parameter(format!("dropout probability {p} outside [0, 1)")));
        }
        if !train || p == 0.0 {
            return Ok(input);
        }
        let keep = T::from_f64(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.nodes[xi].value.numel())
            .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
            .collect();
        let x = &self.nodes[xi].value;
        let value = Tensor::new(x.shape().to_vec(), x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect())?;
        let rg = self.nodes[xi].requires_grad;
        Ok(self.push(value, Op::Dropout { input: xi, mask }, rg))
    }

    /// Mean over the batch of `−log softmax(logits)[target]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let li = self.check(logits)?;
        let [n, k] = self.nodes[li].value.dims2()?;
        if targets.len() != n {
            return Err(TensorError::Input(format!("{} targets for a batch of {n}", targets.len())));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= k) {
            return Err(TensorError::Input(format!("target class {t} outside [0, {k})")));
        }
        let z = self.nodes[li].value.data();
        let mut probs = vec![T::zero(); n * k];
        let mut total = T::zero();
        for (row, (&t, p)) in z.chunks(k).zip(targets.iter().zip(probs.chunks_mut(k))) {
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for (pi, &v) in p.iter_mut().zip(row) {
                *pi = (v - mx).exp();
                s += *pi;
            }
            p.iter_mut().for_each(|v| *v /= s);
            total += -(row[t] - mx - s.ln());
        }
        let loss = total / T::from_f64(n as f64);
        let rg = self.nodes[li].requires_grad;
        Ok(self.push(Tensor::scalar(loss), Op::SoftmaxCe { logits: li, probs, targets: targets.to_vec() }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = self.same_shape(a, b)?;
        let av = &self.nodes[ai].value;
        let data = av.data().iter().zip(self.nodes[bi].value.data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.any_grad(&[ai, bi]);
        Ok(self.push(value, Op::Add { a: ai, b: bi }, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = self.same_shape(a, b)?;
        let av = &self.nodes[ai].value;
        let data = av.data().iter().zip(self.nodes[bi].value.data()).map(|(&x, &y)| x * y).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.any_grad(&[ai, bi]);
        Ok(self.push(value, Op::Mul { a: ai, b: bi }, rg))
    }

    pub fn scale(&mut self, input: Var, factor: T) -> Result<Var> {
        let xi = self.check(input)?;
        let value = self.nodes[xi].value.map(|v| v * factor);
        let rg = self.nodes[xi].requires_grad;
        Ok(self.push(value, Op::Scale { input: xi, factor }, rg))
    }

    fn same_shape(&self, a: Var, b: Var) -> Result<(usize, usize)> {
        let (ai, bi) = (self.check(a)?, self.check(b)?);
        if self.nodes[ai].value.shape() != self.nodes[bi].value.shape() {
            return Err(TensorError::Dimension(format!(
                "shape mismatch {:?} vs {:?}",
                self.nodes[ai].value.shape(),
                self.nodes[bi].value.shape()
            )));
        }
        Ok((ai, bi))
    }

    /// Concatenate `[N, D_i]` tensors into `[N, ΣD_i]`.
    pub fn concat_features(&mut self, inputs: &[Var]) -> Result<Var> {
        let idx: Vec<usize> = inputs.iter().map(|&v| self.check(v)).collect::<Result<_>>()?;
        let first = *idx.first().ok_or_else(|| TensorError::Input("concat of nothing".into()))?;
        let [n, _] = self.nodes[first].value.dims2()?;
        let mut widths = Vec::with_capacity(idx.len());
        for &i in &idx {
            let [ni, di] = self.nodes[i].value.dims2()?;
            if ni != n {
                return Err(TensorError::Dimension(format!("concat batch {ni} vs {n}")));
            }
            widths.push(di);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for r in 0..n {
            for (&i, &d) in idx.iter().zip(&widths) {
                out.extend_from_slice(&self.nodes[i].value.data()[r * d..(r + 1) * d]);
            }
        }
        let rg = self.any_grad(&idx);
        Ok(self.push(Tensor::new(vec![n, total], out)?, Op::Concat { inputs: idx }, rg))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let xi = self.check(input)?;
        let value = self.nodes[xi].value.clone().reshape(shape)?;
        let rg = self.nodes[xi].requires_grad;
        Ok(self.push(value, Op::Reshape { input: xi }, rg))
    }

    /// `[N, ...] → [N, rest]`.
    pub fn flatten(&mut self, input: Var) -> Result<Var> {
        let shape = self.shape(input)?.to_vec();
        let n = *shape.first().ok_or_else(|| TensorError::Dimension("cannot flatten a scalar".into()))?;
        let rest = shape[1..].iter().product();
        self.reshape(input, &[n, rest])
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let xi = self.check(input)?;
        let s = self.nodes[xi].value.data().iter().copied().sum::<T>();
        let rg = self.nodes[xi].requires_grad;
        Ok(self.push(Tensor::scalar(s), Op::Sum { input: xi }, rg))
    }

    // ---- backward ---------------------------------------------------------

    /// Accumulate `dloss/dleaf` into every leaf that requires a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let li = self.check(loss)?;
        if self.backward_done {
            return Err(TensorError::BackwardTwice);
        }
        if !self.nodes[li].value.is_scalar() {
            return Err(TensorError::NonScalarLoss(self.nodes[li].value.shape().to_vec()));
        }
        self.backward_done = true;
        if !self.nodes[li].requires_grad {
            return Ok(());
        }
        accumulate(&mut self.nodes[li], &[T::one()]);
        for i in (0..=li).rev() {
            if matches!(self.nodes[i].op, Op::Leaf) || !self.nodes[i].requires_grad {
                continue;
            }
            let Some(dy) = self.nodes[i].grad.take() else { continue };
            for (parent, g) in self.local_grads(i, &dy) {
                if self.nodes[parent].requires_grad {
                    accumulate(&mut self.nodes[parent], &g);
                }
            }
        }
        Ok(())
    }

    fn wants(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    fn local_grads(&self, i: usize, dy: &[T]) -> Vec<(usize, Vec<T>)> {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::Conv2d { input, kernel, bias, params } => self.conv_backward(*input, *kernel, *bias, *params, node, dy),
            Op::Pow { input, q } => {
                let x = self.nodes[*input].value.data();
                let qf = T::from_f64(f64::from(*q));
                let g = x.iter().zip(dy).map(|(&v, &d)| d * qf * int_pow(v, q - 1)).collect();
                vec![(*input, g)]
            }
            Op::Tanh { input } => {
                let y = node.value.data();
                vec![(*input, y.iter().zip(dy).map(|(&t, &d)| d * (T::one() - t * t)).collect())]
            }
            Op::BatchNorm { input, gamma, beta, xhat, inv_std, train } => {
                let [n, c, h, w] = node.value.dims4().expect("bn rank");
                let plane = h * w;
                let m = T::from_f64((n * plane) as f64);
                let gamma_v = self.nodes[*gamma].value.data();
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for b in 0..n {
                    for ch in 0..c {
                        let r = (b * c + ch) * plane..(b * c + ch + 1) * plane;
                        for (&d, &xh) in dy[r.clone()].iter().zip(&xhat[r]) {
                            dgamma[ch] += d * xh;
                            dbeta[ch] += d;
                        }
                    }
                }
                let mut out = Vec::new();
                if self.wants(*input) {
                    let mut dx = vec![T::zero(); dy.len()];
                    for b in 0..n {
                        for ch in 0..c {
                            let r = (b * c + ch) * plane..(b * c + ch + 1) * plane;
                            let scale = gamma_v[ch] * inv_std[ch];
                            for ((o, &d), &xh) in dx[r.clone()].iter_mut().zip(&dy[r.clone()]).zip(&xhat[r]) {
                                *o = if *train {
                                    scale / m * (m * d - dbeta[ch] - xh * dgamma[ch])
                                } else {
                                    scale * d
                                };
                            }
                        }
                    }
                    out.push((*input, dx));
                }
                out.push((*gamma, dgamma));
                out.push((*beta, dbeta));
                out
            }
            Op::MaxPool { input, argmax } => {
                let mut dx = vec![T::zero(); self.nodes[*input].value.numel()];
                for (&a, &d) in argmax.iter().zip(dy) {
                    dx[a] += d;
                }
                vec![(*input, dx)]
            }
            Op::AdaptiveAvg { input, out_h, out_w } => {
                let [n, c, h, w] = self.nodes[*input].value.dims4().expect("pool rank");
                let mut dx = vec![T::zero(); n * c * h * w];
                let mut it = dy.iter();
                for p in 0..n * c {
                    let base = p * h * w;
                    for by in 0..*out_h {
                        let (y0, y1) = adaptive_bin(by, h, *out_h);
                        for bx in 0..*out_w {
                            let (x0, x1) = adaptive_bin(bx, w, *out_w);
                            let d = *it.next().expect("pool grad") / T::from_f64(((y1 - y0) * (x1 - x0)) as f64);
                            for y in y0..y1 {
                                dx[base + y * w + x0..base + y * w + x1].iter_mut().for_each(|v| *v += d);
                            }
                        }
                    }
                }
                vec![(*input, dx)]
            }
            Op::Affine { input, weight, bias } => {
                let x = &self.nodes[*input].value;
                let wt = &self.nodes[*weight].value;
                let [n, d] = x.dims2().expect("affine rank");
                let k = wt.shape()[0];
                let mut out = Vec::new();
                if self.wants(*input) {
                    let mut dx = vec![T::zero(); n * d];
                    T::gemm(n, k, d, dy, false, wt.data(), false, &mut dx, false);
                    out.push((*input, dx));
                }
                if self.wants(*weight) {
                    let mut dw = vec![T::zero(); k * d];
                    T::gemm(k, n, d, dy, true, x.data(), false, &mut dw, false);
                    out.push((*weight, dw));
                }
                let mut db = vec![T::zero(); k];
                for row in dy.chunks(k) {
                    db.iter_mut().zip(row).for_each(|(a, &b)| *a += b);
                }
                out.push((*bias, db));
                out
            }
            Op::Dropout { input, mask } => vec![(*input, dy.iter().zip(mask).map(|(&d, &m)| d * m).collect())],
            Op::SoftmaxCe { logits, probs, targets } => {
                let k = probs.len() / targets.len();
                let scale = dy[0] / T::from_f64(targets.len() as f64);
                let mut g: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                for (r, &t) in targets.iter().enumerate() {
                    g[r * k + t] -= scale;
                }
                vec![(*logits, g)]
            }
            Op::Add { a, b } => vec![(*a, dy.to_vec()), (*b, dy.to_vec())],
            Op::Mul { a, b } => {
                let (av, bv) = (self.nodes[*a].value.data(), self.nodes[*b].value.data());
                vec![
                    (*a, dy.iter().zip(bv).map(|(&d, &y)| d * y).collect()),
                    (*b, dy.iter().zip(av).map(|(&d, &x)| d * x).collect()),
                ]
            }
            Op::Scale { input, factor } => vec![(*input, dy.iter().map(|&d| d * *factor).collect())],
            Op::Concat { inputs } => {
                let n = node.value.shape()[0];
                let total = node.value.shape()[1];
                let mut offset = 0;
                let mut out = Vec::with_capacity(inputs.len());
                for &i in inputs {
                    let d = self.nodes[i].value.shape()[1];
                    let mut g = Vec::with_capacity(n * d);
                    for r in 0..n {
                        g.extend_from_slice(&dy[r * total + offset..r * total + offset + d]);
                    }
                    offset += d;
                    out.push((i, g));
                }
                out
            }
            Op::Reshape { input } => vec![(*input, dy.to_vec())],
            Op::Sum { input } => vec![(*input, vec![dy[0]; self.nodes[*input].value.numel()])],
        }
    }

    fn conv_backward(
        &self,
        input: usize,
        kernel: usize,
        bias: Option<usize>,
        params: ConvParams,
        node: &Node<T>,
        dy: &[T],
    ) -> Vec<(usize, Vec<T>)> {
        let x = &self.nodes[input].value;
        let k = &self.nodes[kernel].value;
        let [n, c, h, w] = x.dims4().expect("conv input rank");
        let [f, cg, kh, kw] = k.dims4().expect("conv kernel rank");
        let [_, _, out_h, out_w] = node.value.dims4().expect("conv output rank");
        let groups = params.groups;
        let fg = f / groups;
        let geom = ConvGeom { channels: cg, height: h, width: w, kh, kw, stride: params.stride, padding: params.padding, out_h, out_w };
        let (rows, ncols) = (geom.col_rows(), geom.col_cols());
        let want_x = self.wants(input);
        let want_k = self.wants(kernel);
        let mut dx = if want_x { vec![T::zero(); x.numel()] } else { Vec::new() };
        let mut dk = if want_k { vec![T::zero(); k.numel()] } else { Vec::new() };
        let mut cols = vec![T::zero(); rows * ncols];
        for s in 0..n {
            for g in 0..groups {
                let x_range = (s * c + g * cg) * h * w..(s * c + (g + 1) * cg) * h * w;
                let dy_g = &dy[(s * f + g * fg) * ncols..(s * f + (g + 1) * fg) * ncols];
                if want_k {
                    let b_mat: &[T] = if geom.is_pointwise() {
                        &x.data()[x_range.clone()]
                    } else {
                        im2col(&x.data()[x_range.clone()], &geom, &mut cols);
                        &cols
                    };
                    T::gemm(fg, ncols, rows, dy_g, false, b_mat, true, &mut dk[g * fg * rows..(g + 1) * fg * rows], true);
                }
                if want_x {
                    let k_g = &k.data()[g * fg * rows..(g + 1) * fg * rows];
                    if geom.is_pointwise() {
                        T::gemm(rows, fg, ncols, k_g, true, dy_g, false, &mut dx[x_range], true);
                    } else {
                        T::gemm(rows, fg, ncols, k_g, true, dy_g, false, &mut cols, false);
                        col2im_add(&cols, &geom, &mut dx[x_range]);
                    }
                }
            }
        }
        let mut out = Vec::with_capacity(3);
        if want_x {
            out.push((input, dx));
        }
        if want_k {
            out.push((kernel, dk));
        }
        if let Some(b) = bias {
            let mut db = vec![T::zero(); f];
            for (p, plane) in dy.chunks(ncols).enumerate() {
                db[p % f] += plane.iter().copied().sum::<T>();
            }
            out.push((b, db));
        }
        out
    }
}

fn accumulate<T: Scalar>(node: &mut Node<T>, g: &[T]) {
    match &mut node.grad {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
        None => node.grad = Some(g.to_vec()),
    }
}

fn int_pow<T: Scalar>(v: T, q: u32) -> T {
    let mut acc = T::one();
    for _ in 0..q {
        acc *= v;
    }
    acc
}
