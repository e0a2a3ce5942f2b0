//! Operational layers. A Self-ONN neuron replaces the linear kernel with a
//! truncated power series around 0: `y = b + Σ_{q=1..Q} W_q ∗ x^q`.

use rand::Rng;

use super::params::ParamStore;
use super::{NetError, Result};
use crate::tensor::{BatchStats, BnMode, ConvParams, Graph, Scalar, Tensor, Var};

pub const BN_EPS: f64 = 1e-5;
/// Weight of the newest batch in the running statistics.
pub const BN_MOMENTUM: f64 = 0.1;

/// `bias + Σ_q conv2d(x^q, weights[q-1])`.
pub fn selfonn_conv_forward<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    weights: &[Var],
    bias: Option<Var>,
    params: ConvParams,
) -> Result<Var> {
    if weights.is_empty() {
        return Err(NetError::Config("Self-ONN layer needs at least one order".into()));
    }
    let mut acc: Option<Var> = None;
    for (i, &w) in weights.iter().enumerate() {
        let xq = if i == 0 { x } else { g.pow(x, i as u32 + 1)? };
        let y = g.conv2d(xq, w, if i == 0 { bias } else { None }, params)?;
        acc = Some(match acc {
            None => y,
            Some(a) => g.add(a, y)?,
        });
    }
    Ok(acc.expect("at least one order"))
}

/// `bias + Σ_q x^q · weights[q-1]ᵀ` for `x: [N, D]`.
pub fn self_mlp_forward<T: Scalar>(g: &mut Graph<T>, x: Var, weights: &[Var], bias: Var) -> Result<Var> {
    let Some(&w1) = weights.first() else {
        return Err(NetError::Config("Self-MLP layer needs at least one order".into()));
    };
    let mut acc = g.affine(x, w1, bias)?;
    if weights.len() > 1 {
        let k = g.shape(bias)?[0];
        let zero = g.leaf(Tensor::zeros(&[k]), false);
        for (i, &w) in weights.iter().enumerate().skip(1) {
            let xq = g.pow(x, i as u32 + 1)?;
            let y = g.affine(xq, w, zero)?;
            acc = g.add(acc, y)?;
        }
    }
    Ok(acc)
}

/// A running-statistics update produced by a train-mode batchnorm.
#[derive(Clone, Debug)]
pub struct BnUpdate<T: Scalar> {
    pub mean_buffer: usize,
    pub var_buffer: usize,
    pub stats: BatchStats<T>,
}

/// Parameters of one forward pass bound onto a graph.
pub struct LayerCtx<'a, T: Scalar> {
    pub g: &'a mut Graph<T>,
    pub vars: Vec<Var>,
    pub buffers: &'a ParamStore<T>,
    pub train: bool,
    pub bn_updates: Vec<BnUpdate<T>>,
}

impl<'a, T: Scalar> LayerCtx<'a, T> {
    /// Copy every parameter into `g` as a leaf (trainable iff `train`).
    pub fn bind(g: &'a mut Graph<T>, params: &ParamStore<T>, buffers: &'a ParamStore<T>, train: bool) -> Self {
        let vars = params.values().iter().map(|t| g.leaf(t.clone(), train)).collect();
        Self { g, vars, buffers, train, bn_updates: Vec::new() }
    }
}

fn factorial(q: u32) -> f64 {
    (1..=q).map(f64::from).product()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelfOnnConv {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub params: ConvParams,
    pub weights: Vec<usize>,
    pub bias: Option<usize>,
}

impl SelfOnnConv {
    /// Order-`q` kernels drawn from `U(±1/(√fan_in · q!))`; zero bias.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        params: ConvParams,
        q: u32,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let cg = in_ch / params.groups;
        let fan_in = (cg * kernel * kernel) as f64;
        let weights = (1..=q)
            .map(|order| {
                let bound = 1.0 / fan_in.sqrt() / factorial(order);
                let w = Tensor::from_fn(&[out_ch, cg, kernel, kernel], |_| T::from_f64(rng.gen_range(-bound..=bound)));
                store.add(format!("{name}.w{order}"), w)
            })
            .collect();
        let bias = bias.then(|| store.add(format!("{name}.b"), Tensor::zeros(&[out_ch])));
        Self { in_ch, out_ch, kernel, params, weights, bias }
    }

    pub fn q(&self) -> u32 {
        self.weights.len() as u32
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut LayerCtx<'_, T>, x: Var) -> Result<Var> {
        let c = ctx.g.shape(x)?.get(1).copied().unwrap_or(0);
        if c != self.in_ch {
            return Err(NetError::Input(format!("Self-ONN conv expects {} channels, got {c}", self.in_ch)));
        }
        let w: Vec<Var> = self.weights.iter().map(|&i| ctx.vars[i]).collect();
        selfonn_conv_forward(ctx.g, x, &w, self.bias.map(|b| ctx.vars[b]), self.params)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelfMlp {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<usize>,
    pub bias: usize,
}

impl SelfMlp {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, in_dim: usize, out_dim: usize, q: u32, rng: &mut R) -> Self {
        let weights = (1..=q)
            .map(|order| {
                let bound = 1.0 / (in_dim as f64).sqrt() / factorial(order);
                let w = Tensor::from_fn(&[out_dim, in_dim], |_| T::from_f64(rng.gen_range(-bound..=bound)));
                store.add(format!("{name}.w{order}"), w)
            })
            .collect();
        let bias = store.add(format!("{name}.b"), Tensor::zeros(&[out_dim]));
        Self { in_dim, out_dim, weights, bias }
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut LayerCtx<'_, T>, x: Var) -> Result<Var> {
        let w: Vec<Var> = self.weights.iter().map(|&i| ctx.vars[i]).collect();
        self_mlp_forward(ctx.g, x, &w, ctx.vars[self.bias])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub channels: usize,
    pub gamma: usize,
    pub beta: usize,
    pub running_mean: usize,
    pub running_var: usize,
}

impl BatchNorm {
    pub fn new<T: Scalar>(params: &mut ParamStore<T>, buffers: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        Self {
            channels,
            gamma: params.add(format!("{name}.gamma"), Tensor::full(&[channels], T::one())),
            beta: params.add(format!("{name}.beta"), Tensor::zeros(&[channels])),
            running_mean: buffers.add(format!("{name}.running_mean"), Tensor::zeros(&[channels])),
            running_var: buffers.add(format!("{name}.running_var"), Tensor::full(&[channels], T::one())),
        }
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut LayerCtx<'_, T>, x: Var) -> Result<Var> {
        let (gamma, beta) = (ctx.vars[self.gamma], ctx.vars[self.beta]);
        let eps = T::from_f64(BN_EPS);
        if ctx.train {
            let (y, stats) = ctx.g.batchnorm2d(x, gamma, beta, BnMode::Train, eps)?;
            let stats = stats.expect("train mode reports statistics");
            ctx.bn_updates.push(BnUpdate { mean_buffer: self.running_mean, var_buffer: self.running_var, stats });
            Ok(y)
        } else {
            let mean = ctx.buffers.get(self.running_mean).data();
            let var = ctx.buffers.get(self.running_var).data();
            Ok(ctx.g.batchnorm2d(x, gamma, beta, BnMode::Eval { mean, var }, eps)?.0)
        }
    }
}

/// Fold batch statistics into running buffers.
pub fn apply_bn_updates<T: Scalar>(buffers: &mut ParamStore<T>, updates: &[BnUpdate<T>]) {
    let m = T::from_f64(BN_MOMENTUM);
    for u in updates {
        for (buf, src) in [(u.mean_buffer, &u.stats.mean), (u.var_buffer, &u.stats.var)] {
            for (r, &b) in buffers.get_mut(buf).data_mut().iter_mut().zip(src) {
                *r = (T::one() - m) * *r + m * b;
            }
        }
    }
}

/// Inverted-residual block: expand 1×1 → depthwise 3×3 → project 1×1.
#[derive(Clone, Debug, PartialEq)]
pub struct Bottleneck {
    pub in_ch: usize,
    pub out_ch: usize,
    pub stride: usize,
    pub expand: SelfOnnConv,
    pub bn_expand: BatchNorm,
    pub depthwise: SelfOnnConv,
    pub bn_depthwise: BatchNorm,
    pub project: SelfOnnConv,
    pub bn_project: BatchNorm,
    pub residual: bool,
}

impl Bottleneck {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        params: &mut ParamStore<T>,
        buffers: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        stride: usize,
        expansion: usize,
        q: u32,
        rng: &mut R,
    ) -> Self {
        let hidden = in_ch * expansion;
        let pw = ConvParams::default();
        let dw = ConvParams { stride, padding: 1, groups: hidden };
        Self {
            in_ch,
            out_ch,
            stride,
            expand: SelfOnnConv::new(params, &format!("{name}.expand"), in_ch, hidden, 1, pw, q, true, rng),
            bn_expand: BatchNorm::new(params, buffers, &format!("{name}.expand.bn"), hidden),
            depthwise: SelfOnnConv::new(params, &format!("{name}.dw"), hidden, hidden, 3, dw, q, true, rng),
            bn_depthwise: BatchNorm::new(params, buffers, &format!("{name}.dw.bn"), hidden),
            project: SelfOnnConv::new(params, &format!("{name}.project"), hidden, out_ch, 1, pw, q, true, rng),
            bn_project: BatchNorm::new(params, buffers, &format!("{name}.project.bn"), out_ch),
            residual: stride == 1 && in_ch == out_ch,
        }
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut LayerCtx<'_, T>, x: Var) -> Result<Var> {
        let mut y = self.expand.forward(ctx, x)?;
        y = self.bn_expand.forward(ctx, y)?;
        y = ctx.g.tanh(y)?;
        y = self.depthwise.forward(ctx, y)?;
        y = self.bn_depthwise.forward(ctx, y)?;
        y = ctx.g.tanh(y)?;
        y = self.project.forward(ctx, y)?;
        y = self.bn_project.forward(ctx, y)?;
        if self.residual {
            y = ctx.g.add(y, x)?;
        }
        Ok(y)
    }
}
