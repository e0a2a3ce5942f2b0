//! Radiograph preprocessing, enhancement and augmentation.
//!
//! Integer images are processed bit-exactly; whenever a real value is written back
//! to an integer depth it is requantized with round-half-up.

mod augment;
mod border;
mod clahe;
mod geometry;
pub mod io;
mod normalize;
mod tone;

pub use augment::{augment_image, augment_planes, balance_training_set, AugmentSpec, Rotation, TrainItem, CROP_FRACTION, MAX_ROTATION_DEGREES};
pub use border::{clip_borders, ClipOutcome, Trim, BORDER_TAU, MAX_TRIM_FRACTION};
pub use clahe::{clahe, ClaheParams};
pub use geometry::{bilinear_resize, hflip, resize_pad};
pub use normalize::energy_normalize;
pub use tone::{gamma_correct, gamma_lut_u8, invert};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnhanceError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("image format error: {0}")]
    Format(String),
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

pub type Result<T> = std::result::Result<T, EnhanceError>;

/// Round-half-up, the single requantization rule used everywhere.
pub fn round_half_up(v: f64) -> f64 {
    (v + 0.5).floor()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Depth {
    U8,
    U16,
    /// Real intensities in `[0, 1]`.
    Unit,
}

impl Depth {
    /// Largest representable intensity (1.0 for unit images).
    pub fn max_value(self) -> f64 {
        match self {
            Depth::U8 => 255.0,
            Depth::U16 => 65535.0,
            Depth::Unit => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Pixels {
    U8(Vec<u8>),
    U16(Vec<u16>),
    Unit(Vec<f32>),
}

/// Single-channel raster, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Pixels,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Pixels) -> Result<Self> {
        let len = match &pixels {
            Pixels::U8(p) => p.len(),
            Pixels::U16(p) => p.len(),
            Pixels::Unit(p) => {
                if let Some(v) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                    return Err(EnhanceError::Parameter(format!("unit-real pixel {v} outside [0, 1]")));
                }
                p.len()
            }
        };
        if len != width * height {
            return Err(EnhanceError::Dimension(format!("{width}x{height} image needs {} pixels, got {len}", width * height)));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn from_u8(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        Self::new(width, height, Pixels::U8(data))
    }

    pub fn from_u16(width: usize, height: usize, data: Vec<u16>) -> Result<Self> {
        Self::new(width, height, Pixels::U16(data))
    }

    pub fn from_unit(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        Self::new(width, height, Pixels::Unit(data))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &Pixels {
        &self.pixels
    }

    pub fn depth(&self) -> Depth {
        match self.pixels {
            Pixels::U8(_) => Depth::U8,
            Pixels::U16(_) => Depth::U16,
            Pixels::Unit(_) => Depth::Unit,
        }
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Intensities in the image's native scale.
    pub fn values(&self) -> Vec<f64> {
        match &self.pixels {
            Pixels::U8(p) => p.iter().map(|&v| f64::from(v)).collect(),
            Pixels::U16(p) => p.iter().map(|&v| f64::from(v)).collect(),
            Pixels::Unit(p) => p.iter().map(|&v| f64::from(v)).collect(),
        }
    }

    /// Intensities mapped to `[0, 1]`.
    pub fn unit_values(&self) -> Vec<f32> {
        match &self.pixels {
            Pixels::U8(p) => p.iter().map(|&v| f32::from(v) / 255.0).collect(),
            Pixels::U16(p) => p.iter().map(|&v| f32::from(v) / 65535.0).collect(),
            Pixels::Unit(p) => p.clone(),
        }
    }

    /// Build an image of `depth` from native-scale values, clamping to the depth
    /// range and requantizing integer depths with round-half-up.
    pub fn from_values(width: usize, height: usize, depth: Depth, values: &[f64]) -> Result<Self> {
        let max = depth.max_value();
        let q = |v: f64| round_half_up(v.clamp(0.0, max));
        let pixels = match depth {
            Depth::U8 => Pixels::U8(values.iter().map(|&v| q(v) as u8).collect()),
            Depth::U16 => Pixels::U16(values.iter().map(|&v| q(v) as u16).collect()),
            Depth::Unit => Pixels::Unit(values.iter().map(|&v| v.clamp(0.0, 1.0) as f32).collect()),
        };
        Self::new(width, height, pixels)
    }

    /// Same image as 8-bit (unit and 16-bit values are rescaled and requantized).
    pub fn to_u8(&self) -> GrayImage {
        match &self.pixels {
            Pixels::U8(_) => self.clone(),
            _ => {
                let vals: Vec<f64> = self.unit_values().iter().map(|&v| f64::from(v) * 255.0).collect();
                GrayImage::from_values(self.width, self.height, Depth::U8, &vals).expect("same dims")
            }
        }
    }

    pub fn to_unit(&self) -> GrayImage {
        GrayImage { width: self.width, height: self.height, pixels: Pixels::Unit(self.unit_values()) }
    }

    pub(crate) fn sub_image(&self, x0: usize, y0: usize, w: usize, h: usize) -> GrayImage {
        let rows = (y0..y0 + h).flat_map(|y| (x0..x0 + w).map(move |x| y * self.width + x));
        let pixels = match &self.pixels {
            Pixels::U8(p) => Pixels::U8(rows.map(|i| p[i]).collect()),
            Pixels::U16(p) => Pixels::U16(rows.map(|i| p[i]).collect()),
            Pixels::Unit(p) => Pixels::Unit(rows.map(|i| p[i]).collect()),
        };
        GrayImage { width: w, height: h, pixels }
    }
}

/// The four image versions each network in the ensemble is trained on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EnhancementVariant {
    Gray,
    Gamma,
    Invert,
    Chan3,
}

impl EnhancementVariant {
    pub const ALL: [EnhancementVariant; 4] = [Self::Gray, Self::Gamma, Self::Invert, Self::Chan3];

    pub fn tag(self) -> &'static str {
        match self {
            Self::Gray => "gray",
            Self::Gamma => "gamma",
            Self::Invert => "invert",
            Self::Chan3 => "chan3",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.tag() == tag)
    }

    pub fn channels(self) -> usize {
        if self == Self::Chan3 {
            3
        } else {
            1
        }
    }
}

impl std::fmt::Display for EnhancementVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

/// Planar unit-real multi-channel image (`channels × height × width`).
#[derive(Clone, Debug, PartialEq)]
pub struct PlanarImage {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl PlanarImage {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(EnhanceError::Dimension(format!(
                "{channels}x{height}x{width} planar image needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Self { channels, height, width, data })
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        &self.data[c * self.height * self.width..(c + 1) * self.height * self.width]
    }

    /// A `[1, C, H, W]` network input.
    pub fn to_tensor(&self) -> crate::tensor::Tensor<f32> {
        crate::tensor::Tensor::new(vec![1, self.channels, self.height, self.width], self.data.clone()).expect("sizes checked at construction")
    }
}

impl From<&GrayImage> for PlanarImage {
    fn from(img: &GrayImage) -> Self {
        PlanarImage { channels: 1, height: img.height, width: img.width, data: img.unit_values() }
    }
}

/// Stack `[gray, CLAHE, gamma]` into a 3-channel unit-real image.
pub fn merge_3channel(gray: &GrayImage, clahe_img: &GrayImage, gamma_img: &GrayImage) -> Result<PlanarImage> {
    let dims = (gray.width, gray.height);
    for (name, img) in [("clahe", clahe_img), ("gamma", gamma_img)] {
        if (img.width, img.height) != dims {
            return Err(EnhanceError::Dimension(format!(
                "{name} image is {}x{}, gray is {}x{}",
                img.width, img.height, dims.0, dims.1
            )));
        }
    }
    let mut data = gray.unit_values();
    data.extend(clahe_img.unit_values());
    data.extend(gamma_img.unit_values());
    PlanarImage::new(3, gray.height, gray.width, data)
}

/// Enhance a preprocessed grayscale image into the planar input of `variant`.
pub fn render_variant(gray: &GrayImage, variant: EnhancementVariant) -> Result<PlanarImage> {
    let unit = gray.to_unit();
    Ok(match variant {
        EnhancementVariant::Gray => PlanarImage::from(&unit),
        EnhancementVariant::Gamma => PlanarImage::from(&gamma_correct(&unit, 1.0, 2.0)?),
        EnhancementVariant::Invert => PlanarImage::from(&invert(&unit)),
        EnhancementVariant::Chan3 => {
            let eq = clahe(&unit, ClaheParams::default())?;
            merge_3channel(&unit, &eq, &gamma_correct(&unit, 1.0, 2.0)?)?
        }
    })
}

/// Border clipping, energy normalization and square resizing.
pub fn preprocess(img: &GrayImage, target: usize) -> Result<GrayImage> {
    let clipped = clip_borders(img)?;
    let normalized = energy_normalize(&clipped.image);
    resize_pad(&normalized, target)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_pixels_are_range_checked() {
        assert!(GrayImage::from_unit(1, 1, vec![1.5]).is_err());
        assert!(GrayImage::from_unit(2, 1, vec![0.0]).is_err());
        assert!(GrayImage::from_unit(1, 1, vec![1.0]).is_ok());
    }

    #[test]
    fn requantization_rounds_half_up() {
        let img = GrayImage::from_values(3, 1, Depth::U8, &[0.5, 1.49, 300.0]).unwrap();
        assert_eq!(img.pixels(), &Pixels::U8(vec![1, 1, 255]));
    }

    #[test]
    fn merge_keeps_channel_order_and_checks_dims() {
        let a = GrayImage::from_u8(2, 1, vec![0, 255]).unwrap();
        let b = GrayImage::from_u8(2, 1, vec![51, 102]).unwrap();
        let c = GrayImage::from_unit(2, 1, vec![0.25, 0.75]).unwrap();
        let m = merge_3channel(&a, &b, &c).unwrap();
        assert_eq!((m.channels, m.height, m.width), (3, 1, 2));
        assert_eq!(m.plane(0), &[0.0, 1.0]);
        assert_eq!(m.plane(1), &[0.2, 0.4]);
        assert_eq!(m.plane(2), &[0.25, 0.75]);
        let bad = GrayImage::from_u8(1, 2, vec![0, 0]).unwrap();
        assert!(matches!(merge_3channel(&a, &bad, &c), Err(EnhanceError::Dimension(_))));
    }

    #[test]
    fn constant_image_merges_to_constant_channels() {
        let g = GrayImage::from_u8(16, 16, vec![100; 256]).unwrap();
        let eq = clahe(&g, ClaheParams::default()).unwrap();
        let gm = gamma_correct(&g, 1.0, 2.0).unwrap();
        let m = merge_3channel(&g, &eq, &gm).unwrap();
        for c in 0..3 {
            let p = m.plane(c);
            assert!(p.iter().all(|&v| v == p[0]));
        }
        assert_eq!(m.plane(0)[0], 100.0 / 255.0);
        assert_eq!(m.plane(2)[0], gm.unit_values()[0]);
        assert_eq!(m.plane(1)[0], eq.unit_values()[0]);
    }

    #[test]
    fn variant_tags_round_trip() {
        for v in EnhancementVariant::ALL {
            assert_eq!(EnhancementVariant::from_tag(v.tag()), Some(v));
        }
        assert_eq!(EnhancementVariant::ALL.len(), 4);
    }
}
