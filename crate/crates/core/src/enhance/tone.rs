use super::{round_half_up, EnhanceError, GrayImage, Pixels, Result};

/// `p → max − p` (integer depths) or `1 − p` (unit).
pub fn invert(img: &GrayImage) -> GrayImage {
    let pixels = match img.pixels() {
        Pixels::U8(p) => Pixels::U8(p.iter().map(|&v| u8::MAX - v).collect()),
        Pixels::U16(p) => Pixels::U16(p.iter().map(|&v| u16::MAX - v).collect()),
        Pixels::Unit(p) => Pixels::Unit(p.iter().map(|&v| 1.0 - v).collect()),
    };
    GrayImage::new(img.width(), img.height(), pixels).expect("same dims")
}

fn gamma_unit(v: f64, c: f64, gamma: f64) -> f64 {
    (c * v.powf(gamma)).clamp(0.0, 1.0)
}

/// 256-entry table for `round(255 · clamp(C · (v/255)^γ))`.
pub fn gamma_lut_u8(c: f64, gamma: f64) -> [u8; 256] {
    let mut lut = [0u8; 256];
    for (v, out) in lut.iter_mut().enumerate() {
        *out = round_half_up(255.0 * gamma_unit(v as f64 / 255.0, c, gamma)) as u8;
    }
    lut
}

/// `out = C · in^γ` on intensities normalized to `[0, 1]`, clamped, then requantized.
pub fn gamma_correct(img: &GrayImage, c: f64, gamma: f64) -> Result<GrayImage> {
    if !(c > 0.0 && gamma > 0.0) {
        return Err(EnhanceError::Parameter(format!("gamma correction needs C > 0 and gamma > 0, got C={c}, gamma={gamma}")));
    }
    let pixels = match img.pixels() {
        Pixels::U8(p) => {
            let lut = gamma_lut_u8(c, gamma);
            Pixels::U8(p.iter().map(|&v| lut[v as usize]).collect())
        }
        Pixels::U16(p) => Pixels::U16(
            p.iter()
                .map(|&v| round_half_up(65535.0 * gamma_unit(f64::from(v) / 65535.0, c, gamma)) as u16)
                .collect(),
        ),
        Pixels::Unit(p) => Pixels::Unit(p.iter().map(|&v| gamma_unit(f64::from(v), c, gamma) as f32).collect()),
    };
    GrayImage::new(img.width(), img.height(), pixels)
}
