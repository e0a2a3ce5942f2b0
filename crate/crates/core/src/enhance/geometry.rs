use super::{EnhanceError, GrayImage, Result};

fn source_coord(dst: usize, src_len: usize, dst_len: usize) -> (usize, usize, f64) {
    let scale = src_len as f64 / dst_len as f64;
    let s = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
    let i0 = s.floor() as usize;
    let i1 = (i0 + 1).min(src_len - 1);
    (i0, i1, s - i0 as f64)
}

/// Bilinear resample with pixel-center alignment and edge clamping.
pub fn bilinear_resize(src: &[f64], w: usize, h: usize, out_w: usize, out_h: usize) -> Vec<f64> {
    let xs: Vec<_> = (0..out_w).map(|x| source_coord(x, w, out_w)).collect();
    let mut out = Vec::with_capacity(out_w * out_h);
    for y in 0..out_h {
        let (y0, y1, ty) = source_coord(y, h, out_h);
        for &(x0, x1, tx) in &xs {
            let top = src[y0 * w + x0] * (1.0 - tx) + src[y0 * w + x1] * tx;
            let bot = src[y1 * w + x0] * (1.0 - tx) + src[y1 * w + x1] * tx;
            out.push(top * (1.0 - ty) + bot * ty);
        }
    }
    out
}

/// Zero-pad the shorter side to a square (odd remainder to bottom/right), then
/// bilinearly resample to `target × target`.
pub fn resize_pad(img: &GrayImage, target: usize) -> Result<GrayImage> {
    if target < 16 {
        return Err(EnhanceError::Parameter(format!("resize target {target} below 16")));
    }
    let (w, h) = (img.width(), img.height());
    let side = w.max(h);
    let (pad_left, pad_top) = ((side - w) / 2, (side - h) / 2);
    let vals = img.values();
    let mut square = vec![0.0; side * side];
    for y in 0..h {
        let dst = (y + pad_top) * side + pad_left;
        square[dst..dst + w].copy_from_slice(&vals[y * w..(y + 1) * w]);
    }
    let out = if side == target { square } else { bilinear_resize(&square, side, side, target, target) };
    GrayImage::from_values(target, target, img.depth(), &out)
}

pub fn hflip(src: &[f64], w: usize, h: usize) -> Vec<f64> {
    (0..h).flat_map(|y| (0..w).rev().map(move |x| src[y * w + x])).collect()
}

/// Rotate about the image center by `degrees` (positive = counterclockwise as
/// displayed), bilinear, zero fill outside the source.
pub(crate) fn rotate(src: &[f64], w: usize, h: usize, degrees: f64) -> Vec<f64> {
    if degrees == 0.0 {
        return src.to_vec();
    }
    let (sin, cos) = degrees.to_radians().sin_cos();
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let at = |x: isize, y: isize| -> f64 {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0.0
        } else {
            src[y as usize * w + x as usize]
        }
    };
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            // inverse map; y axis points down, so a displayed ccw turn is a cw turn in (x, y)
            let sx = cx + dx * cos - dy * sin;
            let sy = cy + dx * sin + dy * cos;
            let (x0, y0) = (sx.floor(), sy.floor());
            let (tx, ty) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            let top = at(x0, y0) * (1.0 - tx) + at(x0 + 1, y0) * tx;
            let bot = at(x0, y0 + 1) * (1.0 - tx) + at(x0 + 1, y0 + 1) * tx;
            out.push(top * (1.0 - ty) + bot * ty);
        }
    }
    out
}

/// Central `floor(keep·w) × floor(keep·h)` window.
pub(crate) fn center_window(w: usize, h: usize, keep: f64) -> (usize, usize, usize, usize) {
    let cw = ((w as f64 * keep).floor() as usize).max(1);
    let ch = ((h as f64 * keep).floor() as usize).max(1);
    ((w - cw) / 2, (h - ch) / 2, cw, ch)
}

pub(crate) fn crop(src: &[f64], w: usize, x0: usize, y0: usize, cw: usize, ch: usize) -> Vec<f64> {
    (y0..y0 + ch).flat_map(|y| src[y * w + x0..y * w + x0 + cw].iter().copied()).collect()
}
