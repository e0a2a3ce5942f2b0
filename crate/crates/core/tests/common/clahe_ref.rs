//! Reference CLAHE written from the textbook description, for grids that divide
//! the image evenly. Mappings stay real-valued until the final blend is rounded.

pub fn clahe_reference(px: &[u8], w: usize, h: usize, clip: f64, tiles: usize) -> Vec<u8> {
    assert!(w % tiles == 0 && h % tiles == 0);
    let (tw, th) = (w / tiles, h / tiles);
    let area = (tw * th) as f64;
    let mut maps = vec![[0.0f64; 256]; tiles * tiles];
    for ty in 0..tiles {
        for tx in 0..tiles {
            let mut hist = vec![0i64; 256];
            for y in ty * th..(ty + 1) * th {
                for x in tx * tw..(tx + 1) * tw {
                    hist[px[y * w + x] as usize] += 1;
                }
            }
            let limit = ((clip * area / 256.0) as i64).max(1);
            let excess: i64 = hist.iter().map(|&c| (c - limit).max(0)).sum();
            for c in hist.iter_mut() {
                *c = (*c).min(limit) + excess / 256;
            }
            let rem = (excess % 256) as usize;
            if rem > 0 {
                let stride = std::cmp::max(1, 256 / rem);
                for k in 0..rem {
                    if k * stride < 256 {
                        hist[k * stride] += 1;
                    }
                }
            }
            let map = &mut maps[ty * tiles + tx];
            let mut run = 0i64;
            for v in 0..256 {
                run += hist[v];
                map[v] = 255.0 * run as f64 / area;
            }
        }
    }
    let coord = |p: usize, size: usize| -> (usize, usize, f64) {
        let u = (p as f64 + 0.5) / size as f64 - 0.5;
        if u <= 0.0 {
            (0, 0, 0.0)
        } else if u >= (tiles - 1) as f64 {
            (tiles - 1, tiles - 1, 0.0)
        } else {
            let i = u.floor() as usize;
            (i, i + 1, u - i as f64)
        }
    };
    let mut out = vec![0u8; w * h];
    for y in 0..h {
        let (a0, a1, fy) = coord(y, th);
        for x in 0..w {
            let (b0, b1, fx) = coord(x, tw);
            let v = px[y * w + x] as usize;
            let m = |ty: usize, tx: usize| maps[ty * tiles + tx][v];
            let val = (1.0 - fy) * ((1.0 - fx) * m(a0, b0) + fx * m(a0, b1)) + fy * ((1.0 - fx) * m(a1, b0) + fx * m(a1, b1));
            out[y * w + x] = val.round().clamp(0.0, 255.0) as u8;
        }
    }
    out
}
