//! Contrast-limited adaptive histogram equalization.
//!
//! Each tile of a `tiles_x × tiles_y` grid gets a 256-bin histogram, clipped at
//! `clip_limit · tile_pixels / 256` counts. The clipped excess is spread uniformly
//! over all bins in one pass and the integer residual is handed out at an even
//! stride. The tile's cumulative histogram becomes its lookup table, and every
//! pixel blends the tables of the four nearest tile centers bilinearly. Pixels
//! outside the outermost centers use the clamped (nearest) tiles.

use super::{round_half_up, Depth, EnhanceError, GrayImage, Pixels, Result};

const BINS: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClaheParams {
    pub clip_limit: f64,
    pub tiles_x: usize,
    pub tiles_y: usize,
}

impl Default for ClaheParams {
    fn default() -> Self {
        Self { clip_limit: 8.0, tiles_x: 4, tiles_y: 4 }
    }
}

/// Tile `i` of `n` over `len` pixels spans `[i·len/n, (i+1)·len/n)`.
fn tile_span(i: usize, len: usize, n: usize) -> (usize, usize) {
    (i * len / n, (i + 1) * len / n)
}

fn tile_lut(levels: &[u8], width: usize, (x0, x1): (usize, usize), (y0, y1): (usize, usize), clip_limit: f64) -> [u8; BINS] {
    let mut hist = [0u32; BINS];
    for y in y0..y1 {
        for &v in &levels[y * width + x0..y * width + x1] {
            hist[v as usize] += 1;
        }
    }
    let area = ((x1 - x0) * (y1 - y0)) as u32;
    if clip_limit > 0.0 {
        let limit = ((clip_limit * f64::from(area) / BINS as f64).floor() as u32).max(1);
        let mut excess = 0u32;
        for h in hist.iter_mut() {
            if *h > limit {
                excess += *h - limit;
                *h = limit;
            }
        }
        let batch = excess / BINS as u32;
        let mut residual = excess % BINS as u32;
        hist.iter_mut().for_each(|h| *h += batch);
        if residual > 0 {
            let step = (BINS / residual as usize).max(1);
            let mut i = 0;
            while i < BINS && residual > 0 {
                hist[i] += 1;
                residual -= 1;
                i += step;
            }
        }
    }
    let scale = 255.0 / f64::from(area);
    let mut lut = [0u8; BINS];
    let mut cdf = 0u32;
    for (out, &h) in lut.iter_mut().zip(&hist) {
        cdf += h;
        *out = round_half_up(f64::from(cdf) * scale).min(255.0) as u8;
    }
    lut
}

/// Interpolation anchors along one axis: for each pixel, the two neighbouring
/// tile indices and the weight of the second.
fn axis_weights(len: usize, tiles: usize) -> Vec<(usize, usize, f64)> {
    let centers: Vec<f64> = (0..tiles)
        .map(|i| {
            let (a, b) = tile_span(i, len, tiles);
            (a + b - 1) as f64 / 2.0
        })
        .collect();
    (0..len)
        .map(|p| {
            let p = p as f64;
            if p <= centers[0] {
                (0, 0, 0.0)
            } else if p >= centers[tiles - 1] {
                (tiles - 1, tiles - 1, 0.0)
            } else {
                let i = centers.iter().rposition(|&c| c <= p).expect("p above first center");
                (i, i + 1, (p - centers[i]) / (centers[i + 1] - centers[i]))
            }
        })
        .collect()
}

/// CLAHE on 256 intensity levels. 8-bit images are processed directly; 16-bit
/// and unit-real images are binned to 8-bit levels and mapped back to their depth.
pub fn clahe(img: &GrayImage, params: ClaheParams) -> Result<GrayImage> {
    let (w, h) = (img.width(), img.height());
    let ClaheParams { clip_limit, tiles_x, tiles_y } = params;
    if tiles_x == 0 || tiles_y == 0 || w < tiles_x || h < tiles_y {
        return Err(EnhanceError::Parameter(format!("{w}x{h} image cannot hold a {tiles_x}x{tiles_y} tile grid")));
    }
    if !clip_limit.is_finite() || clip_limit < 0.0 {
        return Err(EnhanceError::Parameter(format!("clip limit {clip_limit} must be finite and non-negative")));
    }
    let levels: Vec<u8> = match img.pixels() {
        Pixels::U8(p) => p.clone(),
        Pixels::U16(p) => p.iter().map(|&v| (v >> 8) as u8).collect(),
        Pixels::Unit(_) => match img.to_u8().pixels() {
            Pixels::U8(p) => p.clone(),
            _ => unreachable!("to_u8 yields 8-bit pixels"),
        },
    };
    let luts: Vec<[u8; BINS]> = (0..tiles_y)
        .flat_map(|ty| (0..tiles_x).map(move |tx| (tx, ty)))
        .map(|(tx, ty)| tile_lut(&levels, w, tile_span(tx, w, tiles_x), tile_span(ty, h, tiles_y), clip_limit))
        .collect();
    let xw = axis_weights(w, tiles_x);
    let yw = axis_weights(h, tiles_y);
    let mut out = Vec::with_capacity(w * h);
    for (y, &(ty0, ty1, fy)) in yw.iter().enumerate() {
        for (x, &(tx0, tx1, fx)) in xw.iter().enumerate() {
            let v = levels[y * w + x] as usize;
            let l = |tx: usize, ty: usize| f64::from(luts[ty * tiles_x + tx][v]);
            let top = l(tx0, ty0) * (1.0 - fx) + l(tx1, ty0) * fx;
            let bot = l(tx0, ty1) * (1.0 - fx) + l(tx1, ty1) * fx;
            out.push(round_half_up(top * (1.0 - fy) + bot * fy).min(255.0));
        }
    }
    match img.depth() {
        Depth::U8 => GrayImage::from_values(w, h, Depth::U8, &out),
        Depth::U16 => GrayImage::from_values(w, h, Depth::U16, &out.iter().map(|v| v * 257.0).collect::<Vec<_>>()),
        Depth::Unit => GrayImage::from_values(w, h, Depth::Unit, &out.iter().map(|v| v / 255.0).collect::<Vec<_>>()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_stays_constant() {
        for v in [0u8, 77, 255] {
            let out = clahe(&GrayImage::from_u8(32, 24, vec![v; 768]).unwrap(), ClaheParams::default()).unwrap();
            let vals = out.values();
            assert!(vals.iter().all(|&x| x == vals[0]));
        }
    }

    #[test]
    fn output_within_depth_range_for_all_depths() {
        let px: Vec<u16> = (0..1024u32).map(|i| (i.wrapping_mul(2654435761u32) >> 16) as u16).collect();
        let out = clahe(&GrayImage::from_u16(32, 32, px).unwrap(), ClaheParams::default()).unwrap();
        assert!(out.values().iter().all(|&v| (0.0..=65535.0).contains(&v)));
        let unit: Vec<f32> = (0..1024).map(|i| (i % 97) as f32 / 96.0).collect();
        let out = clahe(&GrayImage::from_unit(32, 32, unit).unwrap(), ClaheParams::default()).unwrap();
        assert!(out.unit_values().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn rejects_grid_larger_than_image() {
        let img = GrayImage::from_u8(3, 8, vec![0; 24]).unwrap();
        assert!(clahe(&img, ClaheParams::default()).is_err());
    }

    #[test]
    fn axis_weights_clamp_at_edges() {
        let w = axis_weights(16, 4);
        // centers at 1.5, 5.5, 9.5, 13.5
        assert_eq!(w[0], (0, 0, 0.0));
        assert_eq!(w[15], (3, 3, 0.0));
        assert_eq!(w[2], (0, 1, 0.125));
        assert_eq!(w[5], (0, 1, 0.875));
    }
}
