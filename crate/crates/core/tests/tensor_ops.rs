mod common;

use common::*;
use rand::Rng;
use selfdense::rng::stream;
use selfdense::tensor::{AdamConfig, AdamState, BnMode, ConvParams, Graph, Tensor, TensorError, Var};

fn conv(stride: usize, padding: usize, groups: usize) -> ConvParams {
    ConvParams { stride, padding, groups }
}

#[test]
fn conv2d_all_ones_sums_to_nine() {
    let mut g = Graph::<f32>::new();
    let x = g.input(Tensor::full(&[1, 1, 3, 3], 1.0));
    let k = g.input(Tensor::full(&[1, 1, 3, 3], 1.0));
    let y = g.conv2d(x, k, None, conv(1, 0, 1)).unwrap();
    assert_eq!(g.value(y).unwrap().shape(), &[1, 1, 1, 1]);
    assert_eq!(g.value(y).unwrap().item(), 9.0);
}

#[test]
fn conv2d_unit_pointwise_kernel_is_identity() {
    let mut r = rng(1);
    let x_t = random_tensor(&[2, 1, 4, 5], -1.0, 1.0, &mut r);
    let mut g = Graph::new();
    let x = g.input(x_t.clone());
    let k = g.input(Tensor::full(&[1, 1, 1, 1], 1.0));
    let y = g.conv2d(x, k, None, ConvParams::default()).unwrap();
    assert_eq!(g.value(y).unwrap(), &x_t);
}

#[test]
fn conv2d_matches_loop_oracle_strided_padded() {
    let mut r = rng(2);
    let x_t = random_tensor(&[1, 2, 5, 5], -1.0, 1.0, &mut r);
    let k_t = random_tensor(&[3, 2, 3, 3], -1.0, 1.0, &mut r);
    let b_t = random_tensor(&[3], -1.0, 1.0, &mut r);
    let mut g = Graph::new();
    let (x, k, b) = (g.input(x_t.clone()), g.input(k_t.clone()), g.input(b_t.clone()));
    let y = g.conv2d(x, k, Some(b), conv(2, 1, 1)).unwrap();
    let want = conv_oracle(&x_t, &k_t, Some(b_t.data()), 2, 1, 1);
    assert_eq!(g.value(y).unwrap().shape(), want.shape());
    assert!(max_abs_diff(g.value(y).unwrap().data(), want.data()) < 1e-6);
}

#[test]
fn depthwise_conv_matches_per_channel_oracle() {
    let mut r = rng(3);
    for &(c, h, stride, pad) in &[(4, 6, 1, 1), (3, 7, 2, 1), (5, 5, 1, 0)] {
        let x_t = random_tensor(&[2, c, h, h], -1.0, 1.0, &mut r);
        let k_t = random_tensor(&[c, 1, 3, 3], -1.0, 1.0, &mut r);
        let mut g = Graph::new();
        let (x, k) = (g.input(x_t.clone()), g.input(k_t.clone()));
        let y = g.conv2d(x, k, None, conv(stride, pad, c)).unwrap();
        // per-channel oracle: each channel convolved alone
        for ch in 0..c {
            let xc = Tensor::from_fn(&[2, 1, h, h], |i| {
                let (b, rest) = (i / (h * h), i % (h * h));
                x_t.data()[(b * c + ch) * h * h + rest]
            });
            let kc = Tensor::new(vec![1, 1, 3, 3], k_t.data()[ch * 9..(ch + 1) * 9].to_vec()).unwrap();
            let want = conv_oracle(&xc, &kc, None, stride, pad, 1);
            let [_, _, oh, ow] = want.dims4().unwrap();
            let got = g.value(y).unwrap();
            for b in 0..2 {
                let plane = &got.data()[(b * c + ch) * oh * ow..(b * c + ch + 1) * oh * ow];
                assert!(max_abs_diff(plane, &want.data()[b * oh * ow..(b + 1) * oh * ow]) < 1e-12);
            }
        }
    }
}

#[test]
fn conv2d_rejects_bad_shapes() {
    let mut g = Graph::<f32>::new();
    let x = g.input(Tensor::zeros(&[1, 3, 4, 4]));
    let k = g.input(Tensor::zeros(&[2, 2, 3, 3]));
    assert!(matches!(g.conv2d(x, k, None, conv(1, 0, 1)), Err(TensorError::Dimension(_))));
    let k2 = g.input(Tensor::zeros(&[2, 3, 3, 3]));
    assert!(matches!(g.conv2d(x, k2, None, conv(0, 0, 1)), Err(TensorError::Parameter(_))));
    let k3 = g.input(Tensor::zeros(&[2, 3, 7, 7]));
    assert!(matches!(g.conv2d(x, k3, None, conv(1, 1, 1)), Err(TensorError::Dimension(_))));
}

#[test]
fn power_values_and_gradient() {
    let mut g = Graph::<f64>::new();
    let x = g.param(Tensor::scalar(2.0));
    let y = g.pow(x, 3).unwrap();
    assert_eq!(g.value(y).unwrap().item(), 8.0);
    let one = g.pow(x, 1).unwrap();
    assert_eq!(g.value(one).unwrap().item(), 2.0);
    assert!(matches!(g.pow(x, 0), Err(TensorError::Parameter(_))));

    let mut g = Graph::<f64>::new();
    let x = g.param(Tensor::scalar(3.0));
    let y = g.pow(x, 2).unwrap();
    g.backward(y).unwrap();
    assert_eq!(g.grad(x).unwrap().item(), 6.0);
}

#[test]
fn tanh_values_and_gradient() {
    let mut g = Graph::<f64>::new();
    let x = g.param(Tensor::new(vec![2], vec![0.0, 20.0]).unwrap());
    let y = g.tanh(x).unwrap();
    let v = g.value(y).unwrap().data().to_vec();
    assert_eq!(v[0], 0.0);
    assert!((v[1] - 1.0).abs() < 1e-6);
    let s = g.sum(y).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data()[0], 1.0);
}

#[test]
fn batchnorm_train_and_eval_formulas() {
    let eps = 1e-5;
    // constant channel → zeros
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::full(&[2, 1, 2, 2], 3.5));
    let (gm, bt) = (g.input(Tensor::full(&[1], 1.0)), g.input(Tensor::zeros(&[1])));
    let (y, stats) = g.batchnorm2d(x, gm, bt, BnMode::Train, eps).unwrap();
    assert!(g.value(y).unwrap().data().iter().all(|&v| v == 0.0));
    assert_eq!(stats.unwrap().mean, vec![3.5]);

    // {−1, +1} already unit variance
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::new(vec![1, 1, 2, 2], vec![-1.0, 1.0, 1.0, -1.0]).unwrap());
    let (gm, bt) = (g.input(Tensor::full(&[1], 1.0)), g.input(Tensor::zeros(&[1])));
    let (y, _) = g.batchnorm2d(x, gm, bt, BnMode::Train, eps).unwrap();
    let expect = 1.0 / (1.0f64 + eps).sqrt();
    for (&o, &i) in g.value(y).unwrap().data().iter().zip(&[-1.0, 1.0, 1.0, -1.0]) {
        assert!((o - i * expect).abs() < 1e-15);
    }

    // eval with fixed running stats matches (x−μ)/√(σ²+ε)·γ+β computed by hand
    let mut r = rng(4);
    let x_t = random_tensor(&[2, 3, 2, 2], -2.0, 2.0, &mut r);
    let (mean, var) = (vec![0.1, -0.3, 0.5], vec![0.8, 1.7, 0.05]);
    let (gam, bet) = (vec![1.5, -0.5, 2.0], vec![0.2, 0.0, -1.0]);
    let mut g = Graph::<f64>::new();
    let x = g.input(x_t.clone());
    let gm = g.input(Tensor::new(vec![3], gam.clone()).unwrap());
    let bt = g.input(Tensor::new(vec![3], bet.clone()).unwrap());
    let (y, stats) = g.batchnorm2d(x, gm, bt, BnMode::Eval { mean: &mean, var: &var }, eps).unwrap();
    assert!(stats.is_none());
    for (i, &o) in g.value(y).unwrap().data().iter().enumerate() {
        let ch = (i / 4) % 3;
        let want = (x_t.data()[i] - mean[ch]) / (var[ch] + eps).sqrt() * gam[ch] + bet[ch];
        assert!((o - want).abs() < 1e-12);
    }

    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::zeros(&[1, 2, 2, 2]));
    let (gm, bt) = (g.input(Tensor::full(&[3], 1.0)), g.input(Tensor::zeros(&[3])));
    assert!(matches!(g.batchnorm2d(x, gm, bt, BnMode::Train, eps), Err(TensorError::Dimension(_))));
}

#[test]
fn pooling_values() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let y = g.max_pool2d(x, 2).unwrap();
    assert_eq!(g.value(y).unwrap().data(), &[4.0]);
    let a = g.adaptive_avg_pool2d(x, 1, 1).unwrap();
    assert_eq!(g.value(a).unwrap().data(), &[2.5]);
    assert!(matches!(g.adaptive_avg_pool2d(x, 3, 1), Err(TensorError::Parameter(_))));
    assert!(matches!(g.max_pool2d(x, 3), Err(TensorError::Parameter(_))));
}

#[test]
fn adaptive_avg_5_to_2_matches_bin_enumeration() {
    let x_t = Tensor::from_fn(&[1, 1, 5, 5], |i| (i * i % 7) as f64);
    let mut g = Graph::<f64>::new();
    let x = g.input(x_t.clone());
    let y = g.adaptive_avg_pool2d(x, 2, 2).unwrap();
    // bins along each axis: rows/cols {0,1} and {2,3,4}
    let bins: [&[usize]; 2] = [&[0, 1], &[2, 3, 4]];
    let mut want = Vec::new();
    for rows in bins {
        for cols in bins {
            let mut s = 0.0;
            for &r in rows {
                for &c in cols {
                    s += x_t.data()[r * 5 + c];
                }
            }
            want.push(s / (rows.len() * cols.len()) as f64);
        }
    }
    assert!(max_abs_diff(g.value(y).unwrap().data(), &want) < 1e-15);
}

#[test]
fn max_pool_gradient_goes_to_first_maximum() {
    let mut g = Graph::<f64>::new();
    let x = g.param(Tensor::new(vec![1, 1, 2, 2], vec![5.0, 5.0, 5.0, 1.0]).unwrap());
    let y = g.max_pool2d(x, 2).unwrap();
    let s = g.sum(y).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn affine_cases() {
    let mut r = rng(5);
    let x_t = random_tensor(&[3, 4], -1.0, 1.0, &mut r);
    let mut g = Graph::<f64>::new();
    let x = g.input(x_t.clone());
    let eye = g.input(Tensor::from_fn(&[4, 4], |i| if i / 4 == i % 4 { 1.0 } else { 0.0 }));
    let zb = g.input(Tensor::zeros(&[4]));
    let y = g.affine(x, eye, zb).unwrap();
    assert_eq!(g.value(y).unwrap(), &x_t);

    let zw = g.input(Tensor::zeros(&[2, 4]));
    let b = g.input(Tensor::new(vec![2], vec![0.5, -2.0]).unwrap());
    let y = g.affine(x, zw, b).unwrap();
    assert_eq!(g.value(y).unwrap().data(), &[0.5, -2.0, 0.5, -2.0, 0.5, -2.0]);

    let w_t = random_tensor(&[2, 4], -1.0, 1.0, &mut r);
    let b_t = random_tensor(&[2], -1.0, 1.0, &mut r);
    let w = g.input(w_t.clone());
    let b = g.input(b_t.clone());
    let y = g.affine(x, w, b).unwrap();
    let mut want = vec![0.0; 6];
    for i in 0..3 {
        for k in 0..2 {
            want[i * 2 + k] = b_t.data()[k];
            for d in 0..4 {
                want[i * 2 + k] += x_t.data()[i * 4 + d] * w_t.data()[k * 4 + d];
            }
        }
    }
    assert!(max_abs_diff(g.value(y).unwrap().data(), &want) < 1e-12);
    let bad = g.input(Tensor::zeros(&[2, 3]));
    assert!(matches!(g.affine(x, bad, b), Err(TensorError::Dimension(_))));
}

#[test]
fn dropout_modes_and_expectation() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::full(&[100_000], 1.0));
    let mut s = stream(11, "dropout", 0);
    let same = g.dropout(x, 0.0, true, &mut s).unwrap();
    assert_eq!(same, x);
    let eval = g.dropout(x, 0.5, false, &mut s).unwrap();
    assert_eq!(eval, x);
    let y = g.dropout(x, 0.3, true, &mut s).unwrap();
    let v = g.value(y).unwrap().data();
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
    assert!(matches!(g.dropout(x, 1.0, true, &mut s), Err(TensorError::Parameter(_))));
}

#[test]
fn softmax_cross_entropy_cases() {
    let mut g = Graph::<f64>::new();
    let z = g.param(Tensor::zeros(&[1, 2]));
    let l = g.softmax_cross_entropy(z, &[1]).unwrap();
    assert!((g.value(l).unwrap().item() - std::f64::consts::LN_2).abs() < 1e-12);

    let z2 = g.param(Tensor::new(vec![1, 3], vec![0.0, 50.0, 0.0]).unwrap());
    let l2 = g.softmax_cross_entropy(z2, &[1]).unwrap();
    assert!(g.value(l2).unwrap().item() < 1e-6);
    assert!(matches!(g.softmax_cross_entropy(z2, &[3]), Err(TensorError::Input(_))));

    // gradient vs central differences, h = 1e-5
    let mut r = rng(6);
    let z_t = random_tensor(&[2, 3], -2.0, 2.0, &mut r);
    let err = max_grad_rel_error(&[z_t.clone()], |g, v| g.softmax_cross_entropy(v[0], &[2, 0]).unwrap());
    assert!(err < 1e-6, "rel err {err}");
    // and the closed form (softmax − onehot)/N
    let mut g = Graph::<f64>::new();
    let z = g.param(z_t.clone());
    let l = g.softmax_cross_entropy(z, &[2, 0]).unwrap();
    g.backward(l).unwrap();
    let grad = g.grad(z).unwrap();
    for (row, &t) in [2usize, 0].iter().enumerate() {
        let zr = &z_t.data()[row * 3..row * 3 + 3];
        let s: f64 = zr.iter().map(|v| v.exp()).sum();
        for k in 0..3 {
            let want = (zr[k].exp() / s - if k == t { 1.0 } else { 0.0 }) / 2.0;
            assert!((grad.data()[row * 3 + k] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn backward_basics() {
    let mut g = Graph::<f64>::new();
    let x = g.param(Tensor::scalar(3.0));
    let unused = g.param(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
    let y = g.mul(x, x).unwrap();
    g.backward(y).unwrap();
    assert_eq!(g.grad(x).unwrap().item(), 6.0);
    assert_eq!(g.grad(unused).unwrap().data(), &[0.0, 0.0]);
    assert!(matches!(g.backward(y), Err(TensorError::BackwardTwice)));
    g.zero_grad();
    g.backward(y).unwrap();
    assert_eq!(g.grad(x).unwrap().item(), 6.0);

    let v = g.param(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
    let mut g2 = Graph::<f64>::new();
    assert!(matches!(g2.backward(v), Err(TensorError::DetachedGraph)));
    let mut g3 = Graph::<f64>::new();
    let w = g3.param(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
    assert!(matches!(g3.backward(w), Err(TensorError::NonScalarLoss(_))));
}

#[test]
fn tanh_conv_sum_gradients_match_finite_differences() {
    let mut r = rng(7);
    let x = random_tensor(&[2, 2, 5, 5], -1.0, 1.0, &mut r);
    let k = random_tensor(&[3, 2, 3, 3], -0.5, 0.5, &mut r);
    let b = random_tensor(&[3], -0.5, 0.5, &mut r);
    let err = max_grad_rel_error(&[x, k, b], |g, v| {
        let y = g.conv2d(v[0], v[1], Some(v[2]), ConvParams { stride: 2, padding: 1, groups: 1 }).unwrap();
        let t = g.tanh(y).unwrap();
        g.sum(t).unwrap()
    });
    assert!(err < 1e-4, "rel err {err}");
}

/// Weighted sum so every output element carries a distinct upstream gradient.
fn weighted_sum(g: &mut Graph<f64>, y: Var, seed: u64) -> Var {
    let shape = g.shape(y).unwrap().to_vec();
    let mut r = rng(seed);
    let w = g.input(random_tensor(&shape, -1.0, 1.0, &mut r));
    let p = g.mul(y, w).unwrap();
    g.sum(p).unwrap()
}

#[test]
fn every_differentiable_op_passes_gradient_check() {
    let mut r = rng(8);
    for trial in 0..3u64 {
        let n = 1 + trial as usize;
        let x = random_tensor(&[n, 4, 6, 6], -1.0, 1.0, &mut r);
        let dw = random_tensor(&[4, 1, 3, 3], -0.5, 0.5, &mut r);
        let gm = random_tensor(&[4], 0.5, 1.5, &mut r);
        let bt = random_tensor(&[4], -0.5, 0.5, &mut r);
        let err = max_grad_rel_error(&[x.clone(), dw, gm.clone(), bt.clone()], |g, v| {
            let y = g.conv2d(v[0], v[1], None, ConvParams { stride: 1, padding: 1, groups: 4 }).unwrap();
            let (y, _) = g.batchnorm2d(y, v[2], v[3], BnMode::Train, 1e-5).unwrap();
            let y = g.pow(y, 3).unwrap();
            let y = g.max_pool2d(y, 2).unwrap();
            let y = g.adaptive_avg_pool2d(y, 2, 2).unwrap();
            weighted_sum(g, y, 100 + trial)
        });
        assert!(err < 1e-4, "depthwise/bn/pow/pool rel err {err}");

        let mean = [0.1, 0.0, -0.2, 0.3];
        let var = [1.2, 0.7, 0.9, 1.0];
        let err = max_grad_rel_error(&[x, gm, bt], |g, v| {
            let (y, _) = g.batchnorm2d(v[0], v[1], v[2], BnMode::Eval { mean: &mean, var: &var }, 1e-5).unwrap();
            let y = g.tanh(y).unwrap();
            weighted_sum(g, y, 200 + trial)
        });
        assert!(err < 1e-4, "eval bn rel err {err}");

        let a = random_tensor(&[n, 5], -1.0, 1.0, &mut r);
        let w = random_tensor(&[3, 5], -1.0, 1.0, &mut r);
        let b = random_tensor(&[3], -1.0, 1.0, &mut r);
        let c = random_tensor(&[n, 2], -1.0, 1.0, &mut r);
        let targets: Vec<usize> = (0..n).map(|i| i % 5).collect();
        let err = max_grad_rel_error(&[a, w, b, c], |g, v| {
            let y = g.affine(v[0], v[1], v[2]).unwrap();
            let y = g.tanh(y).unwrap();
            let y = g.concat_features(&[y, v[3]]).unwrap();
            let y = g.scale(y, 1.7).unwrap();
            let y2 = g.pow(v[3], 2).unwrap();
            let y2 = g.concat_features(&[v[3], y2, v[3]]).unwrap();
            let y2 = g.reshape(y2, &[n, 6]).unwrap();
            let y = g.concat_features(&[y, y2]).unwrap();
            let z = g.add(y, y).unwrap();
            g.softmax_cross_entropy(z, &targets).unwrap()
        });
        assert!(err < 1e-4, "affine/concat/ce rel err {err}");
    }
}

#[test]
fn backward_of_summed_losses_is_sum_of_separate_backwards() {
    let mut r = rng(9);
    let x_t = random_tensor(&[2, 3], -1.0, 1.0, &mut r);
    let build = |g: &mut Graph<f64>, x: Var, which: u8| -> Var {
        let t = g.tanh(x).unwrap();
        let l1 = g.softmax_cross_entropy(t, &[0, 2]).unwrap();
        let p = g.pow(x, 2).unwrap();
        let l2 = g.sum(p).unwrap();
        match which {
            1 => l1,
            2 => l2,
            _ => g.add(l1, l2).unwrap(),
        }
    };
    let grad = |which| {
        let mut g = Graph::new();
        let x = g.param(x_t.clone());
        let l = build(&mut g, x, which);
        g.backward(l).unwrap();
        g.grad(x).unwrap()
    };
    let (both, a, b) = (grad(0), grad(1), grad(2));
    for i in 0..6 {
        assert!((both.data()[i] - a.data()[i] - b.data()[i]).abs() < 1e-14);
    }
}

#[test]
fn graph_replay_is_bitwise_reproducible() {
    let run = || {
        let mut r = rng(10);
        let x_t: Tensor<f32> = Tensor::from_fn(&[2, 3, 8, 8], |_| r.gen_range(-1.0..1.0));
        let k_t: Tensor<f32> = Tensor::from_fn(&[4, 3, 3, 3], |_| r.gen_range(-1.0..1.0));
        let mut g = Graph::<f32>::new();
        let x = g.input(x_t);
        let k = g.param(k_t);
        let y = g.conv2d(x, k, None, ConvParams { stride: 2, padding: 1, groups: 1 }).unwrap();
        let mut s = stream(3, "dropout", 1);
        let y = g.dropout(y, 0.25, true, &mut s).unwrap();
        let y = g.flatten(y).unwrap();
        let w = g.param(Tensor::full(&[2, 64], 0.01));
        let b = g.param(Tensor::zeros(&[2]));
        let z = g.affine(y, w, b).unwrap();
        let l = g.softmax_cross_entropy(z, &[0, 1]).unwrap();
        g.backward(l).unwrap();
        (g.value(l).unwrap().item().to_bits(), g.grad(k).unwrap().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
    };
    assert_eq!(run(), run());
}

#[test]
fn adam_updates_a_trained_parameter() {
    let mut p = Tensor::<f64>::full(&[3], 1.0);
    let mut st = AdamState::new(AdamConfig { lr: 0.1, ..AdamConfig::default() }, [&p]);
    for _ in 0..200 {
        let mut g = Graph::new();
        let x = g.param(p.clone());
        let sq = g.pow(x, 2).unwrap();
        let l = g.sum(sq).unwrap();
        g.backward(l).unwrap();
        let grad = g.grad(x).unwrap();
        st.step(&mut [&mut p], &[&grad]).unwrap();
    }
    assert!(p.data().iter().all(|v| v.abs() < 0.05));
}
