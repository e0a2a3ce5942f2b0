mod common;

use common::clahe_ref::clahe_reference;
use common::rng;
use proptest::prelude::*;
use rand::Rng;
use selfdense::enhance::{
    clahe, clip_borders, gamma_correct, gamma_lut_u8, invert, render_variant, resize_pad, ClaheParams, Depth,
    EnhancementVariant, GrayImage, Pixels, Trim,
};

fn u8_pixels(img: &GrayImage) -> Vec<u8> {
    match img.pixels() {
        Pixels::U8(p) => p.clone(),
        other => panic!("expected 8-bit, got {other:?}"),
    }
}

fn max_level_diff(a: &[u8], b: &[u8]) -> i32 {
    a.iter().zip(b).map(|(&x, &y)| (i32::from(x) - i32::from(y)).abs()).max().unwrap()
}

#[test]
fn gamma_lut_matches_closed_form_for_every_level() {
    let lut = gamma_lut_u8(1.0, 2.0);
    for v in 0..=255u32 {
        let x = f64::from(v) / 255.0;
        assert_eq!(u32::from(lut[v as usize]), (255.0 * x * x).round() as u32, "level {v}");
    }
}

#[test]
fn clahe_matches_reference_on_random_images() {
    let mut r = rng(21);
    for _ in 0..20 {
        let px: Vec<u8> = (0..64 * 64).map(|_| r.gen()).collect();
        let img = GrayImage::from_u8(64, 64, px.clone()).unwrap();
        let got = u8_pixels(&clahe(&img, ClaheParams::default()).unwrap());
        let want = clahe_reference(&px, 64, 64, 8.0, 4);
        assert!(max_level_diff(&got, &want) <= 1);
    }
}

#[test]
fn clahe_matches_reference_on_ramp_and_without_clipping() {
    let ramp: Vec<u8> = (0..256).map(|i| ((i % 16) * 8 + (i / 16) * 7) as u8).collect();
    let img = GrayImage::from_u8(16, 16, ramp.clone()).unwrap();
    let got = u8_pixels(&clahe(&img, ClaheParams::default()).unwrap());
    assert!(max_level_diff(&got, &clahe_reference(&ramp, 16, 16, 8.0, 4)) <= 1);

    // a clip limit far above any bin count is plain adaptive equalization
    let mut r = rng(22);
    let px: Vec<u8> = (0..64 * 64).map(|i| (((i % 64) as f64 * 2.0) as u8).wrapping_add(r.gen_range(0..40))).collect();
    let img = GrayImage::from_u8(64, 64, px.clone()).unwrap();
    let params = ClaheParams { clip_limit: 1e6, ..ClaheParams::default() };
    let got = u8_pixels(&clahe(&img, params).unwrap());
    assert!(max_level_diff(&got, &clahe_reference(&px, 64, 64, 1e6, 4)) <= 1);
}

#[test]
fn frame_is_trimmed_exactly() {
    let mut r = rng(23);
    let (w, h, frame) = (40, 32, 5);
    let mut px = vec![0u8; w * h];
    for y in 0..h {
        for x in 0..w {
            px[y * w + x] = if x < frame || y < frame || x >= w - frame || y >= h - frame { 12 } else { r.gen_range(30..230) };
        }
    }
    // frame-scan oracle: count constant edge lines from each side
    let row_const = |y: usize| px[y * w..(y + 1) * w].iter().all(|&v| v == px[y * w]);
    let col_const = |x: usize| (0..h).all(|y| px[y * w + x] == px[x]);
    let expect = Trim {
        top: (0..h).take_while(|&y| row_const(y)).count(),
        bottom: (0..h).rev().take_while(|&y| row_const(y)).count(),
        left: (0..w).take_while(|&x| col_const(x)).count(),
        right: (0..w).rev().take_while(|&x| col_const(x)).count(),
    };
    assert_eq!(expect, Trim { top: 5, bottom: 5, left: 5, right: 5 });
    let out = clip_borders(&GrayImage::from_u8(w, h, px).unwrap()).unwrap();
    assert_eq!(out.trim, expect);
    assert_eq!((out.image.width(), out.image.height()), (30, 22));
}

#[test]
fn ramp_resize_matches_bilinear_hand_oracle() {
    // 3 wide × 5 tall ramp, padded to 5×5 (1 column left, 1 right), resized to 16×16
    let vals: Vec<f32> = (0..15).map(|i| i as f32 / 14.0).collect();
    let img = GrayImage::from_unit(3, 5, vals.clone()).unwrap();
    let out = resize_pad(&img, 16).unwrap().unit_values();
    let mut padded = [[0.0f64; 5]; 5];
    for y in 0..5 {
        for x in 0..3 {
            padded[y][x + 1] = f64::from(vals[y * 3 + x]);
        }
    }
    let src = |d: usize| -> f64 { ((d as f64 + 0.5) * 5.0 / 16.0 - 0.5).clamp(0.0, 4.0) };
    for y in 0..16 {
        for x in 0..16 {
            let (sy, sx) = (src(y), src(x));
            let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(4), (x0 + 1).min(4));
            let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
            let want = padded[y0][x0] * (1.0 - fy) * (1.0 - fx)
                + padded[y0][x1] * (1.0 - fy) * fx
                + padded[y1][x0] * fy * (1.0 - fx)
                + padded[y1][x1] * fy * fx;
            assert!((f64::from(out[y * 16 + x]) - want).abs() < 1e-6, "({x},{y})");
        }
    }
}

#[test]
fn variants_have_expected_channel_counts() {
    let img = GrayImage::from_u8(16, 16, (0..=255).collect()).unwrap();
    for v in EnhancementVariant::ALL {
        let p = render_variant(&img, v).unwrap();
        assert_eq!(p.channels, v.channels());
        assert_eq!((p.height, p.width), (16, 16));
        assert!(p.data.iter().all(|x| (0.0..=1.0).contains(x)));
    }
    let inv = render_variant(&img, EnhancementVariant::Invert).unwrap();
    assert_eq!(inv.data[0], 1.0);
}

proptest! {
    #[test]
    fn invert_is_an_involution(px in proptest::collection::vec(any::<u16>(), 16), unit in proptest::collection::vec(0.0f32..=1.0, 16)) {
        let a = GrayImage::from_u16(4, 4, px.clone()).unwrap();
        prop_assert_eq!(invert(&invert(&a)), a);
        let b = GrayImage::from_u8(4, 4, px.iter().map(|&v| v as u8).collect()).unwrap();
        prop_assert_eq!(invert(&invert(&b)), b);
        let c = GrayImage::from_unit(4, 4, unit.iter().map(|&v| (v * 1024.0).round() / 1024.0).collect()).unwrap();
        prop_assert_eq!(invert(&invert(&c)), c);
    }

    #[test]
    fn gamma_preserves_order(a in 0.0f64..=1.0, b in 0.0f64..=1.0, gamma in 0.1f64..5.0) {
        let img = GrayImage::from_values(2, 1, Depth::Unit, &[a.min(b), a.max(b)]).unwrap();
        let v = gamma_correct(&img, 1.0, gamma).unwrap().unit_values();
        prop_assert!(v[0] <= v[1]);
    }

    #[test]
    fn resize_pad_keeps_aspect(w in 16usize..60, h in 16usize..60) {
        let img = GrayImage::from_u8(w, h, vec![200; w * h]).unwrap();
        let side = w.max(h);
        let out = resize_pad(&img, side).unwrap();
        let v = out.values();
        // content columns / rows are exactly the original extent
        let cols = (0..side).filter(|&x| (0..side).any(|y| v[y * side + x] > 0.0)).count();
        let rows = (0..side).filter(|&y| (0..side).any(|x| v[y * side + x] > 0.0)).count();
        prop_assert_eq!((cols, rows), (w, h));
    }

    #[test]
    fn clahe_stays_in_range(seed in any::<u64>()) {
        let mut r = rng(seed);
        let px: Vec<u8> = (0..24 * 20).map(|_| r.gen()).collect();
        let out = clahe(&GrayImage::from_u8(24, 20, px).unwrap(), ClaheParams::default()).unwrap();
        prop_assert_eq!(out.depth(), Depth::U8);
    }
}
