//! Synthetic radiograph-like images: smoothed noise, oblique rib bands and, for
//! the positive class, one to three Gaussian blobs.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use super::{io_err, DatasetError, DatasetManifest, Record, Result};
use crate::enhance::{io::write_pgm, Depth, GrayImage};
use crate::rng::stream;

const BASE_LEVEL: f64 = 90.0;
const NOISE_SIGMA: f64 = 6.0;
const RIB_AMPLITUDE: f64 = 12.0;
/// Mean of `exp(-d²/2σ²)` over the disc of radius `2σ`: `(1 − e⁻²) / 2`.
const DISC_MEAN_GAIN: f64 = 0.432_332_358_381_693_6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlobParams {
    pub min_blobs: usize,
    pub max_blobs: usize,
    /// Blob radius range as a fraction of the image width.
    pub radius_frac: (f64, f64),
    /// Mean disc contrast range, in units of the background standard deviation.
    pub contrast_sigmas: (f64, f64),
}

impl Default for BlobParams {
    fn default() -> Self {
        Self { min_blobs: 1, max_blobs: 3, radius_frac: (0.04, 0.12), contrast_sigmas: (4.0, 5.0) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthBlob {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
    /// Peak height; the Gaussian has σ = radius / 2.
    pub amplitude: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSample {
    pub id: String,
    pub label: u8,
    pub image: GrayImage,
    pub blobs: Vec<SynthBlob>,
}

/// Nominal standard deviation of the background texture.
pub fn background_sigma() -> f64 {
    (NOISE_SIGMA * NOISE_SIGMA + RIB_AMPLITUDE * RIB_AMPLITUDE / 2.0).sqrt()
}

fn box_blur(src: &[f64], size: usize) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    for y in 0..size {
        for x in 0..size {
            let mut acc = 0.0;
            let mut n = 0.0;
            for yy in y.saturating_sub(1)..=(y + 1).min(size - 1) {
                for xx in x.saturating_sub(1)..=(x + 1).min(size - 1) {
                    acc += src[yy * size + xx];
                    n += 1.0;
                }
            }
            out[y * size + x] = acc / n;
        }
    }
    out
}

/// Real-valued background of sample `index` (before quantization).
pub fn synth_background(seed: u64, index: usize, size: usize) -> Vec<f64> {
    let mut rng = stream(seed, "synth-bg", index as u64);
    let white: Vec<f64> = (0..size * size).map(|_| rng.sample(StandardNormal)).collect();
    let mut noise = box_blur(&box_blur(&white, size), size);
    let mean = noise.iter().sum::<f64>() / noise.len() as f64;
    let std = (noise.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / noise.len() as f64).sqrt().max(1e-12);
    noise.iter_mut().for_each(|v| *v = (*v - mean) / std * NOISE_SIGMA);

    let period = rng.gen_range(0.15..0.25) * size as f64;
    let slope: f64 = rng.gen_range(-0.3..0.3);
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let mut out = noise;
    for y in 0..size {
        for x in 0..size {
            let t = (y as f64 + slope * x as f64) / period * std::f64::consts::TAU + phase;
            out[y * size + x] += BASE_LEVEL + RIB_AMPLITUDE * t.sin();
        }
    }
    out
}

fn draw_blobs(seed: u64, index: usize, size: usize, params: &BlobParams) -> Vec<SynthBlob> {
    let mut rng = stream(seed, "synth-blob", index as u64);
    let count = rng.gen_range(params.min_blobs..=params.max_blobs);
    let s = size as f64;
    (0..count)
        .map(|_| {
            let radius = rng.gen_range(params.radius_frac.0..=params.radius_frac.1) * s;
            let margin = radius + 1.0;
            let cx = rng.gen_range(margin..s - margin);
            let cy = rng.gen_range(margin..s - margin);
            let k = rng.gen_range(params.contrast_sigmas.0..=params.contrast_sigmas.1);
            SynthBlob { cx, cy, radius, amplitude: k * background_sigma() / DISC_MEAN_GAIN }
        })
        .collect()
}

fn validate(n: usize, size: usize, params: &BlobParams) -> Result<()> {
    if n == 0 || n % 2 != 0 {
        return Err(DatasetError::Parameter(format!("n = {n} must be even and positive")));
    }
    if size < 32 {
        return Err(DatasetError::Parameter(format!("image size {size} below 32")));
    }
    let (r0, r1) = params.radius_frac;
    if params.min_blobs == 0 || params.min_blobs > params.max_blobs || !(0.0 < r0 && r0 <= r1 && r1 < 0.5) {
        return Err(DatasetError::Parameter(format!("bad blob parameters {params:?}")));
    }
    Ok(())
}

/// `n/2` nodule samples (ids `syn00000…`) followed by `n/2` blob-free samples.
pub fn synth_generate(n: usize, size: usize, params: &BlobParams, seed: u64) -> Result<Vec<SynthSample>> {
    validate(n, size, params)?;
    (0..n)
        .map(|i| {
            let label = u8::from(i < n / 2);
            let mut img = synth_background(seed, i, size);
            let blobs = if label == 1 { draw_blobs(seed, i, size, params) } else { Vec::new() };
            for b in &blobs {
                let two_var = 2.0 * (b.radius / 2.0).powi(2);
                for y in 0..size {
                    for x in 0..size {
                        let d2 = (x as f64 - b.cx).powi(2) + (y as f64 - b.cy).powi(2);
                        img[y * size + x] += b.amplitude * (-d2 / two_var).exp();
                    }
                }
            }
            let image = GrayImage::from_values(size, size, Depth::U8, &img)?;
            Ok(SynthSample { id: format!("syn{i:05}"), label, image, blobs })
        })
        .collect()
}

/// Write `images/<id>.pgm` under `dir` plus `manifest.csv`; returns the manifest.
pub fn synth_write(dir: &Path, samples: &[SynthSample], header_comment: Option<&str>) -> Result<DatasetManifest> {
    let img_dir = dir.join("images");
    std::fs::create_dir_all(&img_dir).map_err(io_err(&img_dir))?;
    let mut records = Vec::with_capacity(samples.len());
    for s in samples {
        let path = img_dir.join(format!("{}.pgm", s.id));
        write_pgm(&path, &s.image)?;
        records.push(Record { id: s.id.clone(), path, label: s.label });
    }
    let manifest = DatasetManifest::new(records)?;
    super::write_manifest(&dir.join("manifest.csv"), &manifest, header_comment)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halves_and_determinism() {
        let a = synth_generate(10, 32, &BlobParams::default(), 4).unwrap();
        assert_eq!(a.iter().filter(|s| s.label == 1).count(), 5);
        assert!(a.iter().all(|s| (s.label == 1) == !s.blobs.is_empty()));
        assert_eq!(a, synth_generate(10, 32, &BlobParams::default(), 4).unwrap());
        assert_ne!(a[0].image, synth_generate(10, 32, &BlobParams::default(), 5).unwrap()[0].image);
    }

    #[test]
    fn rejects_odd_or_small() {
        assert!(synth_generate(9, 32, &BlobParams::default(), 0).is_err());
        assert!(synth_generate(10, 31, &BlobParams::default(), 0).is_err());
    }

    #[test]
    fn disc_gain_constant() {
        assert!((DISC_MEAN_GAIN - (1.0 - (-2.0f64).exp()) / 2.0).abs() < 1e-15);
    }
}
