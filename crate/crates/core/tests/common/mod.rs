#![allow(dead_code)]

pub mod clahe_ref;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use selfdense::tensor::{Graph, Tensor, Var};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Central-difference gradient check. Returns the worst relative error over every
/// element of every input, with the denominator floored at `1e-3`.
pub fn max_grad_rel_error(
    inputs: &[Tensor<f64>],
    build: impl Fn(&mut Graph<f64>, &[Var]) -> Var,
) -> f64 {
    let eval = |ins: &[Tensor<f64>]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.param(t.clone())).collect();
        let out = build(&mut g, &vars);
        g.value(out).unwrap().item()
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars);
    g.backward(out).unwrap();
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| g.grad(v).unwrap()).collect();

    let mut worst = 0.0f64;
    for (ti, t) in inputs.iter().enumerate() {
        for e in 0..t.numel() {
            let x = t.data()[e];
            let h = 1e-5 * x.abs().max(1.0);
            let mut plus = inputs.to_vec();
            plus[ti].data_mut()[e] = x + h;
            let mut minus = inputs.to_vec();
            minus[ti].data_mut()[e] = x - h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let a = analytic[ti].data()[e];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
            worst = worst.max(rel);
        }
    }
    worst
}

/// Direct nested-loop grouped cross-correlation.
pub fn conv_oracle(
    x: &Tensor<f64>,
    k: &Tensor<f64>,
    bias: Option<&[f64]>,
    stride: usize,
    pad: usize,
    groups: usize,
) -> Tensor<f64> {
    let [n, c, h, w] = x.dims4().unwrap();
    let [f, cg, kh, kw] = k.dims4().unwrap();
    let fg = f / groups;
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * f * oh * ow];
    for b in 0..n {
        for fo in 0..f {
            let g = fo / fg;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = bias.map_or(0.0, |bs| bs[fo]);
                    for ci in 0..cg {
                        let ch = g * cg + ci;
                        for i in 0..kh {
                            for j in 0..kw {
                                let y = (oy * stride + i) as isize - pad as isize;
                                let xx = (ox * stride + j) as isize - pad as isize;
                                if y >= 0 && xx >= 0 && (y as usize) < h && (xx as usize) < w {
                                    s += x.data()[((b * c + ch) * h + y as usize) * w + xx as usize]
                                        * k.data()[((fo * cg + ci) * kh + i) * kw + j];
                                }
                            }
                        }
                    }
                    out[((b * f + fo) * oh + oy) * ow + ox] = s;
                }
            }
        }
    }
    Tensor::new(vec![n, f, oh, ow], out).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
