use super::config::NUM_CLASSES;
use super::layers::{apply_bn_updates, BatchNorm, BnUpdate, Bottleneck, LayerCtx, SelfMlp, SelfOnnConv};
use super::params::ParamStore;
use super::{ModelConfig, NetError, Result};
use crate::rng::{stream, StreamRng};
use crate::tensor::{ConvParams, Graph, Scalar, Tensor, Var};

pub enum ForwardMode<'r> {
    /// Batch statistics, dropout active.
    Train(&'r mut StreamRng),
    /// Running statistics, no dropout.
    Eval,
}

pub struct ForwardOutput<T: Scalar> {
    /// `[N, 2]` raw class scores.
    pub logits: Var,
    /// Parameter leaves in store order, for reading gradients.
    pub param_vars: Vec<Var>,
    /// Feature maps by name: `stem` (after the max-pool), then `stage0`, `stage1`, ….
    pub taps: Vec<(String, Var)>,
    pub bn_updates: Vec<BnUpdate<T>>,
}

/// Self-ONN stem, bottleneck stages with pooled feature taps, Self-MLP head.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T: Scalar> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub buffers: ParamStore<T>,
    stem: SelfOnnConv,
    stem_bn: BatchNorm,
    stages: Vec<Vec<Bottleneck>>,
    hidden: Option<SelfMlp>,
    head: SelfMlp,
}

impl<T: Scalar> Model<T> {
    /// Fresh model with weights drawn from the `(seed, "init", 0)` stream.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(seed, "init", 0);
        let (mut params, mut buffers) = (ParamStore::default(), ParamStore::default());
        let stem_params = ConvParams { stride: 2, padding: 1, groups: 1 };
        let stem = SelfOnnConv::new(&mut params, "stem", config.in_channels, config.stem_channels, 3, stem_params, config.q, true, &mut rng);
        let stem_bn = BatchNorm::new(&mut params, &mut buffers, "stem.bn", config.stem_channels);
        let mut stages = Vec::with_capacity(config.stages.len());
        let mut in_ch = config.stem_channels;
        for (si, spec) in config.stages.iter().enumerate() {
            let blocks = (0..spec.blocks)
                .map(|bi| {
                    let stride = if bi == 0 { spec.stride } else { 1 };
                    let name = format!("stage{si}.block{bi}");
                    let b = Bottleneck::new(&mut params, &mut buffers, &name, in_ch, spec.channels, stride, config.expansion, config.block_q, &mut rng);
                    in_ch = spec.channels;
                    b
                })
                .collect();
            stages.push(blocks);
        }
        let width = config.feature_width();
        let (hidden, head) = if config.head_hidden > 0 {
            let h = SelfMlp::new(&mut params, "head.hidden", width, config.head_hidden, config.q, &mut rng);
            (Some(h), SelfMlp::new(&mut params, "head.out", config.head_hidden, NUM_CLASSES, config.q, &mut rng))
        } else {
            (None, SelfMlp::new(&mut params, "head.out", width, NUM_CLASSES, config.q, &mut rng))
        };
        Ok(Self { config: config.clone(), params, buffers, stem, stem_bn, stages, hidden, head })
    }

    /// Rebuild the architecture for `config` and load the given tensors, which
    /// must match the expected names and shapes exactly.
    pub fn from_parts(config: &ModelConfig, params: ParamStore<T>, buffers: ParamStore<T>) -> Result<Self> {
        let mut model = Self::build(config, 0)?;
        for (kind, want, got) in [("parameter", &model.params, &params), ("buffer", &model.buffers, &buffers)] {
            if want.len() != got.len() {
                return Err(NetError::Config(format!("expected {} {kind} tensors, found {}", want.len(), got.len())));
            }
            for (name, t) in want.iter() {
                let g = got.by_name(name).ok_or_else(|| NetError::Config(format!("missing {kind} {name}")))?;
                if g.shape() != t.shape() {
                    return Err(NetError::Config(format!("{kind} {name}: shape {:?}, config implies {:?}", g.shape(), t.shape())));
                }
            }
        }
        for (dst, src) in [(&mut model.params, &params), (&mut model.buffers, &buffers)] {
            for i in 0..dst.len() {
                let name = dst.names()[i].clone();
                *dst.get_mut(i) = src.by_name(&name).expect("checked above").clone();
            }
        }
        Ok(model)
    }

    /// Same architecture and weights in another precision.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        let mut m = Model::<U>::build(&self.config, 0).expect("config already validated");
        for (dst, src) in [(&mut m.params, &self.params), (&mut m.buffers, &self.buffers)] {
            for (i, t) in src.values().iter().enumerate() {
                *dst.get_mut(i) = t.cast();
            }
        }
        m
    }

    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    pub fn forward(&self, g: &mut Graph<T>, x: Var, mode: ForwardMode<'_>) -> Result<ForwardOutput<T>> {
        let cfg = &self.config;
        let shape = g.shape(x)?.to_vec();
        if shape.len() != 4 || shape[1] != cfg.in_channels || shape[2] != cfg.image_size || shape[3] != cfg.image_size {
            return Err(NetError::Input(format!(
                "input shape {shape:?}, model expects [N, {}, {}, {}]",
                cfg.in_channels, cfg.image_size, cfg.image_size
            )));
        }
        let (train, mut rng) = match mode {
            ForwardMode::Train(r) => (true, Some(r)),
            ForwardMode::Eval => (false, None),
        };
        let mut ctx = LayerCtx::bind(g, &self.params, &self.buffers, train);
        let mut taps = Vec::with_capacity(self.stages.len() + 1);
        let mut y = self.stem.forward(&mut ctx, x)?;
        y = self.stem_bn.forward(&mut ctx, y)?;
        y = ctx.g.tanh(y)?;
        y = ctx.g.max_pool2d(y, 2)?;
        taps.push(("stem".to_string(), y));
        let mut features = Vec::with_capacity(self.stages.len() + 1);
        let pooled = ctx.g.adaptive_avg_pool2d(y, 1, 1)?;
        features.push(ctx.g.flatten(pooled)?);
        for (si, blocks) in self.stages.iter().enumerate() {
            for b in blocks {
                y = b.forward(&mut ctx, y)?;
            }
            taps.push((format!("stage{si}"), y));
            let pooled = ctx.g.adaptive_avg_pool2d(y, 1, 1)?;
            let flat = ctx.g.flatten(pooled)?;
            features.push(ctx.g.tanh(flat)?);
        }
        let mut h = ctx.g.concat_features(&features)?;
        if let Some(r) = rng.as_deref_mut() {
            h = ctx.g.dropout(h, cfg.dropout, true, r)?;
        }
        if let Some(hidden) = &self.hidden {
            h = hidden.forward(&mut ctx, h)?;
            h = ctx.g.tanh(h)?;
        }
        let logits = self.head.forward(&mut ctx, h)?;
        Ok(ForwardOutput { logits, param_vars: ctx.vars, taps, bn_updates: ctx.bn_updates })
    }

    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate<T>]) {
        apply_bn_updates(&mut self.buffers, updates);
    }

    /// Eval-mode logits for a stacked `[N, C, H, W]` batch.
    pub fn logits(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let x = g.input(batch.clone());
        let out = self.forward(&mut g, x, ForwardMode::Eval)?;
        Ok(g.value(out.logits)?.clone())
    }
}

/// `softmax(l)[1]` for a two-class logit pair.
pub fn probability_from_logits(l0: f64, l1: f64) -> f64 {
    1.0 / (1.0 + (l0 - l1).exp())
}

/// Nodule-class probability for each `[1, C, H, W]` image, evaluated in chunks of
/// `batch_size`. Eval mode treats samples independently, so the result does
/// not depend on the chunking.
pub fn predict_proba<T: Scalar>(model: &Model<T>, images: &[Tensor<T>], batch_size: usize) -> Result<Vec<f64>> {
    if batch_size == 0 {
        return Err(NetError::Input("batch size must be positive".into()));
    }
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(batch_size) {
        let batch = Tensor::stack_batch(chunk)?;
        let logits = model.logits(&batch)?;
        out.extend(logits.data().chunks(NUM_CLASSES).map(|l| probability_from_logits(Scalar::to_f64(l[0]), Scalar::to_f64(l[1]))));
    }
    Ok(out)
}
