//! ScoreCAM saliency: activation maps of one layer are normalised, upsampled
//! and used as input masks; the target-class logit of each masked input,
//! softmaxed over the maps, weights their sum.

use std::path::Path;

use thiserror::Error;

use crate::enhance::io::{write_planar, write_png_rgb, CAM1_MAGIC};
use crate::enhance::{bilinear_resize, EnhanceError, PlanarImage};
use crate::net::{ForwardMode, Model, ModelConfig, NetError, NUM_CLASSES};
use crate::tensor::{Graph, Scalar, Tensor};

pub const OVERLAY_ALPHA: f64 = 0.4;
/// Masked images evaluated per forward pass.
const MASK_BATCH: usize = 16;

#[derive(Debug, Error)]
pub enum ScoreCamError {
    #[error("unknown layer '{0}'")]
    UnknownLayer(String),
    #[error("length mismatch: {0}")]
    Length(String),
    #[error("non-finite score for map {0}")]
    NonFinite(usize),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Image(#[from] EnhanceError),
}

impl From<crate::tensor::TensorError> for ScoreCamError {
    fn from(e: crate::tensor::TensorError) -> Self {
        ScoreCamError::Net(NetError::from(e))
    }
}

pub type Result<T> = std::result::Result<T, ScoreCamError>;

/// `K` maps of `h × w`, map-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationStack {
    pub layer: String,
    pub k: usize,
    pub h: usize,
    pub w: usize,
    pub maps: Vec<f64>,
}

impl ActivationStack {
    pub fn new(layer: impl Into<String>, k: usize, h: usize, w: usize, maps: Vec<f64>) -> Result<Self> {
        if k == 0 || h == 0 || w == 0 || maps.len() != k * h * w {
            return Err(ScoreCamError::Length(format!("{} values for {k} maps of {h}x{w}", maps.len())));
        }
        Ok(Self { layer: layer.into(), k, h, w, maps })
    }

    pub fn map(&self, k: usize) -> &[f64] {
        &self.maps[k * self.h * self.w..(k + 1) * self.h * self.w]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CamResult {
    pub layer: String,
    pub target: usize,
    pub weights: Vec<f64>,
    /// Raw target logits of the masked inputs.
    pub scores: Vec<f64>,
    pub height: usize,
    pub width: usize,
    /// Row-major values in `[0, 1]`.
    pub cam: Vec<f64>,
}

/// The last stage output, or the stem for a model without stages.
pub fn default_layer(config: &ModelConfig) -> String {
    match config.stages.len() {
        0 => "stem".into(),
        n => format!("stage{}", n - 1),
    }
}

/// Eval-mode feature maps of `layer` for a single `[1, C, H, W]` image.
pub fn extract_activations<T: Scalar>(model: &Model<T>, image: &Tensor<T>, layer: &str) -> Result<ActivationStack> {
    let mut g = Graph::new();
    let x = g.input(image.clone());
    let out = model.forward(&mut g, x, ForwardMode::Eval)?;
    let (_, var) = out.taps.iter().find(|(name, _)| name == layer).ok_or_else(|| ScoreCamError::UnknownLayer(layer.into()))?;
    let t = g.value(*var)?;
    let [n, k, h, w] = t.dims4()?;
    if n != 1 {
        return Err(ScoreCamError::Length(format!("expected one image, got a batch of {n}")));
    }
    ActivationStack::new(layer, k, h, w, t.data().iter().map(|&v| Scalar::to_f64(v)).collect())
}

/// Min-max scaling to `[0, 1]`; a constant map becomes all zeros.
pub fn normalize_map(map: &[f64]) -> Vec<f64> {
    let lo = map.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = map.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.0; map.len()];
    }
    map.iter().map(|&v| (v - lo) / (hi - lo)).collect()
}

/// Softmax with the maximum subtracted first.
pub fn softmax_weights(scores: &[f64]) -> Vec<f64> {
    let mx = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|&s| (s - mx).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}

/// Target-class logit of the image masked by each normalised, upsampled map,
/// and the softmax of those logits.
pub fn cic_scores<T: Scalar>(
    model: &Model<T>,
    image: &Tensor<T>,
    stack: &ActivationStack,
    target: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if target >= NUM_CLASSES {
        return Err(ScoreCamError::Length(format!("target class {target} outside [0, {NUM_CLASSES})")));
    }
    let [n, c, h, w] = image.dims4()?;
    if n != 1 {
        return Err(ScoreCamError::Length(format!("expected one image, got a batch of {n}")));
    }
    let masks: Vec<Vec<f64>> =
        (0..stack.k).map(|k| bilinear_resize(&normalize_map(stack.map(k)), stack.w, stack.h, w, h)).collect();
    let mut scores = Vec::with_capacity(stack.k);
    for chunk in masks.chunks(MASK_BATCH) {
        let items: Vec<Tensor<T>> = chunk
            .iter()
            .map(|m| {
                let data = image.data().iter().enumerate().map(|(i, &v)| v * T::from_f64(m[i % (h * w)])).collect();
                Tensor::new(vec![1, c, h, w], data)
            })
            .collect::<std::result::Result<_, _>>()?;
        let logits = model.logits(&Tensor::stack_batch(&items)?)?;
        scores.extend(logits.data().chunks(NUM_CLASSES).map(|l| Scalar::to_f64(l[target])));
    }
    if let Some(k) = scores.iter().position(|s| !s.is_finite()) {
        return Err(ScoreCamError::NonFinite(k));
    }
    let weights = softmax_weights(&scores);
    Ok((scores, weights))
}

/// `normalize(max(0, Σ α_k·A_k))`, upsampled bilinearly to `out_h × out_w`.
pub fn compose_cam(stack: &ActivationStack, weights: &[f64], out_h: usize, out_w: usize) -> Result<Vec<f64>> {
    if weights.len() != stack.k {
        return Err(ScoreCamError::Length(format!("{} weights for {} maps", weights.len(), stack.k)));
    }
    let mut sum = vec![0.0; stack.h * stack.w];
    for (k, &a) in weights.iter().enumerate() {
        sum.iter_mut().zip(stack.map(k)).for_each(|(s, &v)| *s += a * v);
    }
    sum.iter_mut().for_each(|v| *v = v.max(0.0));
    let norm = normalize_map(&sum);
    Ok(bilinear_resize(&norm, stack.w, stack.h, out_w, out_h))
}

pub fn score_cam<T: Scalar>(model: &Model<T>, image: &Tensor<T>, layer: &str, target: usize) -> Result<CamResult> {
    let [_, _, h, w] = image.dims4()?;
    let stack = extract_activations(model, image, layer)?;
    let (scores, weights) = cic_scores(model, image, &stack, target)?;
    let cam = compose_cam(&stack, &weights, h, w)?;
    Ok(CamResult { layer: layer.into(), target, weights, scores, height: h, width: w, cam })
}

/// Blue at 0, green at 0.5, red at 1, linear in between.
pub fn colormap(v: f64) -> [f64; 3] {
    let v = v.clamp(0.0, 1.0);
    if v <= 0.5 {
        let t = v / 0.5;
        [0.0, t, 1.0 - t]
    } else {
        let t = (v - 0.5) / 0.5;
        [t, 1.0 - t, 0.0]
    }
}

/// RGB bytes of the colormapped CAM alpha-blended over a unit-range grayscale image.
pub fn overlay_rgb(gray: &[f64], cam: &[f64]) -> Result<Vec<u8>> {
    if gray.len() != cam.len() {
        return Err(ScoreCamError::Length(format!("image has {} pixels, cam {}", gray.len(), cam.len())));
    }
    let mut out = Vec::with_capacity(gray.len() * 3);
    for (&g, &c) in gray.iter().zip(cam) {
        let g = g.clamp(0.0, 1.0);
        for ch in colormap(c) {
            let v = (1.0 - OVERLAY_ALPHA) * g + OVERLAY_ALPHA * ch;
            out.push(crate::enhance::round_half_up(255.0 * v) as u8);
        }
    }
    Ok(out)
}

/// Overlay on the first channel of a `[1, C, H, W]` unit-range image, written as PNG.
pub fn overlay_export<T: Scalar>(path: &Path, image: &Tensor<T>, cam: &CamResult) -> Result<()> {
    let [_, _, h, w] = image.dims4()?;
    if (h, w) != (cam.height, cam.width) {
        return Err(ScoreCamError::Length(format!("image {h}x{w}, cam {}x{}", cam.height, cam.width)));
    }
    let gray: Vec<f64> = image.data()[..h * w].iter().map(|&v| Scalar::to_f64(v)).collect();
    write_png_rgb(path, w, h, &overlay_rgb(&gray, &cam.cam)?)?;
    Ok(())
}

/// Raw CAM as a one-channel planar float file.
pub fn write_cam_dump(path: &Path, cam: &CamResult) -> Result<()> {
    let img = PlanarImage::new(1, cam.height, cam.width, cam.cam.iter().map(|&v| v as f32).collect())?;
    write_planar(path, CAM1_MAGIC, &img)?;
    Ok(())
}
