use super::{EnhanceError, GrayImage, Result};

/// Edge lines whose variance is below `BORDER_TAU · R²` count as uniform border,
/// where `R` is the image's dynamic range.
pub const BORDER_TAU: f64 = 1e-4;
/// At most this fraction of a dimension is removed from any one side.
pub const MAX_TRIM_FRACTION: f64 = 0.25;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Trim {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClipOutcome {
    pub image: GrayImage,
    pub trim: Trim,
    /// Set when the whole image is uniform; the input is returned unchanged.
    pub uniform: bool,
}

fn variance(vals: impl Iterator<Item = f64> + Clone) -> f64 {
    let (n, s) = vals.clone().fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
    let mean = s / n as f64;
    vals.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64
}

/// Count leading lines (by `line(i)`) that are uniform, up to `cap`.
fn leading_uniform(count: usize, cap: usize, thresh: f64, is_line_var: impl Fn(usize) -> f64) -> usize {
    (0..count.min(cap)).take_while(|&i| is_line_var(i) < thresh).count()
}

/// Remove uniform rows and columns from each edge.
pub fn clip_borders(img: &GrayImage) -> Result<ClipOutcome> {
    let (w, h) = (img.width(), img.height());
    if w < 8 || h < 8 {
        return Err(EnhanceError::Parameter(format!("clip_borders needs at least 8x8, got {w}x{h}")));
    }
    let vals = img.values();
    let (lo, hi) = vals.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let range = hi - lo;
    if range == 0.0 {
        log::warn!("clip_borders: image is uniform, returning it unchanged");
        return Ok(ClipOutcome { image: img.clone(), trim: Trim::default(), uniform: true });
    }
    let thresh = BORDER_TAU * range * range;
    let cap_h = (h as f64 * MAX_TRIM_FRACTION).floor() as usize;
    let cap_w = (w as f64 * MAX_TRIM_FRACTION).floor() as usize;
    let row_var = |y: usize, x0: usize, x1: usize| variance((x0..x1).map(|x| vals[y * w + x]));
    let top = leading_uniform(h, cap_h, thresh, |i| row_var(i, 0, w));
    let bottom = leading_uniform(h, cap_h, thresh, |i| row_var(h - 1 - i, 0, w));
    let (y0, y1) = (top, h - bottom);
    let col_var = |x: usize| variance((y0..y1).map(|y| vals[y * w + x]));
    let left = leading_uniform(w, cap_w, thresh, col_var);
    let right = leading_uniform(w, cap_w, thresh, |i| col_var(w - 1 - i));
    let trim = Trim { top, bottom, left, right };
    let image = img.sub_image(left, top, w - left - right, y1 - y0);
    Ok(ClipOutcome { image, trim, uniform: false })
}
