use rand::Rng;

use super::geometry::{bilinear_resize, center_window, crop, hflip, rotate};
use super::{EnhanceError, GrayImage, PlanarImage, Result};
use crate::rng::stream;

pub const MAX_ROTATION_DEGREES: f64 = 15.0;
/// Fraction trimmed from each side when cropping.
pub const CROP_FRACTION: f64 = 0.10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rotation {
    Clockwise,
    CounterClockwise,
}

/// One augmentation draw: rotate, then perimeter crop, then optional mirror.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentSpec {
    pub rotation_degrees: f64,
    pub rotation: Rotation,
    pub crop: bool,
    pub hflip: bool,
}

impl AugmentSpec {
    pub fn identity() -> Self {
        Self { rotation_degrees: 0.0, rotation: Rotation::CounterClockwise, crop: false, hflip: false }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=MAX_ROTATION_DEGREES).contains(&self.rotation_degrees) {
            return Err(EnhanceError::Parameter(format!(
                "rotation {} outside [0, {MAX_ROTATION_DEGREES}] degrees",
                self.rotation_degrees
            )));
        }
        Ok(())
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let rotation_degrees = rng.gen_range(0.0..=MAX_ROTATION_DEGREES);
        let rotation = if rng.gen::<bool>() { Rotation::Clockwise } else { Rotation::CounterClockwise };
        Self { rotation_degrees, rotation, crop: rng.gen(), hflip: rng.gen() }
    }

    fn signed_degrees(&self) -> f64 {
        match self.rotation {
            Rotation::CounterClockwise => self.rotation_degrees,
            Rotation::Clockwise => -self.rotation_degrees,
        }
    }
}

fn augment_plane(src: &[f64], w: usize, h: usize, spec: &AugmentSpec) -> Vec<f64> {
    let mut out = rotate(src, w, h, spec.signed_degrees());
    if spec.crop {
        let (x0, y0, cw, ch) = center_window(w, h, 1.0 - 2.0 * CROP_FRACTION);
        out = bilinear_resize(&crop(&out, w, x0, y0, cw, ch), cw, ch, w, h);
    }
    if spec.hflip {
        out = hflip(&out, w, h);
    }
    out
}

pub fn augment_image(img: &GrayImage, spec: &AugmentSpec) -> Result<GrayImage> {
    spec.validate()?;
    let out = augment_plane(&img.values(), img.width(), img.height(), spec);
    GrayImage::from_values(img.width(), img.height(), img.depth(), &out)
}

/// Apply the same augmentation to every channel of a planar image.
pub fn augment_planes(img: &PlanarImage, spec: &AugmentSpec) -> Result<PlanarImage> {
    spec.validate()?;
    let mut data = Vec::with_capacity(img.data.len());
    for c in 0..img.channels {
        let plane: Vec<f64> = img.plane(c).iter().map(|&v| f64::from(v)).collect();
        data.extend(augment_plane(&plane, img.width, img.height, spec).into_iter().map(|v| v.clamp(0.0, 1.0) as f32));
    }
    PlanarImage::new(img.channels, img.height, img.width, data)
}

/// A training sample: an original, or an augmented copy of one.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainItem {
    pub index: usize,
    pub augment: Option<AugmentSpec>,
}

/// Oversample the minority class with augmented copies.
///
/// With `factor = floor(majority / minority)`, each minority sample gets
/// `factor − 1` copies, each with a fresh spec drawn from the stream
/// `(seed, "augment", index)`. Originals come first, in input order.
pub fn balance_training_set(train_indices: &[usize], labels: &[u8], seed: u64) -> Result<Vec<TrainItem>> {
    let label_of = |i: usize| -> Result<u8> {
        labels.get(i).copied().ok_or_else(|| EnhanceError::Parameter(format!("train index {i} has no label")))
    };
    let mut counts = [0usize; 2];
    for &i in train_indices {
        let l = label_of(i)?;
        if l > 1 {
            return Err(EnhanceError::Parameter(format!("label {l} at index {i} is not binary")));
        }
        counts[l as usize] += 1;
    }
    if counts[0] == 0 || counts[1] == 0 {
        return Err(EnhanceError::Parameter("balancing needs both classes in the training set".into()));
    }
    let minority = if counts[1] < counts[0] { 1u8 } else { 0u8 };
    let factor = counts[1 - minority as usize] / counts[minority as usize];
    let mut items: Vec<TrainItem> = train_indices.iter().map(|&index| TrainItem { index, augment: None }).collect();
    if factor > 1 {
        for &index in train_indices {
            if label_of(index)? != minority {
                continue;
            }
            let mut rng = stream(seed, "augment", index as u64);
            for _ in 1..factor {
                items.push(TrainItem { index, augment: Some(AugmentSpec::random(&mut rng)) });
            }
        }
    }
    Ok(items)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> GrayImage {
        GrayImage::from_u8(w, h, (0..w * h).map(|i| (i * 7 % 251) as u8).collect()).unwrap()
    }

    #[test]
    fn identity_spec_is_identity() {
        let img = ramp(20, 14);
        assert_eq!(augment_image(&img, &AugmentSpec::identity()).unwrap(), img);
    }

    #[test]
    fn double_flip_is_identity() {
        let img = ramp(9, 5);
        let flip = AugmentSpec { hflip: true, ..AugmentSpec::identity() };
        let once = augment_image(&img, &flip).unwrap();
        assert_ne!(once, img);
        assert_eq!(augment_image(&once, &flip).unwrap(), img);
    }

    #[test]
    fn crop_window_is_central_eighty_percent() {
        assert_eq!(center_window(50, 31, 1.0 - 2.0 * CROP_FRACTION), (5, 3, 40, 24));
        let img = ramp(50, 31);
        let out = augment_image(&img, &AugmentSpec { crop: true, ..AugmentSpec::identity() }).unwrap();
        assert_eq!((out.width(), out.height()), (50, 31));
    }

    #[test]
    fn rotation_out_of_range_rejected() {
        let spec = AugmentSpec { rotation_degrees: 16.0, ..AugmentSpec::identity() };
        assert!(augment_image(&ramp(8, 8), &spec).is_err());
    }

    #[test]
    fn balancing_counts_follow_floor_factor() {
        let mut labels = vec![1u8; 795];
        labels.extend(vec![0u8; 2625]);
        let idx: Vec<usize> = (0..labels.len()).collect();
        let items = balance_training_set(&idx, &labels, 3).unwrap();
        let nodules = items.iter().filter(|t| labels[t.index] == 1).count();
        assert_eq!(nodules, 2385);
        assert_eq!(items.len(), 2385 + 2625);
        // two augmented copies per original nodule, none for the majority class
        assert_eq!(items.iter().filter(|t| t.augment.is_some()).count(), 1590);
        assert!(items.iter().filter(|t| t.augment.is_some()).all(|t| labels[t.index] == 1));
    }

    #[test]
    fn balanced_set_is_unchanged_and_draws_are_seeded() {
        let labels = vec![0u8, 1, 0, 1];
        let items = balance_training_set(&[0, 1, 2, 3], &labels, 1).unwrap();
        assert!(items.iter().all(|t| t.augment.is_none()));
        let labels = vec![1u8, 0, 0, 0, 0, 0];
        let a = balance_training_set(&[0, 1, 2, 3, 4, 5], &labels, 9).unwrap();
        let b = balance_training_set(&[0, 1, 2, 3, 4, 5], &labels, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 10);
        assert!(balance_training_set(&[1, 2], &labels, 9).is_err());
    }
}
