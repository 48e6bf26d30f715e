mod common;

use common::{direct_conv2d, dot, random_tensor, rng};
use dbdn::ops::{self, conv2d, conv2d_transpose, pixel_shuffle, pixel_unshuffle};
use dbdn::{ConvParams, Shape, Tape, Tensor};
use proptest::prelude::*;
use rand::Rng;

fn params(rng: &mut rand_chacha::ChaCha8Rng, cin: usize, cout: usize, k: usize, stride: usize, pad: usize) -> ConvParams<f64> {
    let mut p = ConvParams::<f64>::zeros(cin, cout, k, stride, pad);
    p.weight = random_tensor(rng, p.weight.shape());
    p.bias = random_tensor(rng, p.bias.shape());
    p
}

#[test]
fn conv2d_preserves_extent_with_unit_padding() {
    let x = Tensor::<f32>::zeros(Shape::new(1, 64, 24, 24));
    let p = ConvParams::<f32>::zeros(64, 64, 3, 1, 1);
    assert_eq!(conv2d(&x, &p).unwrap().shape(), Shape::new(1, 64, 24, 24));
}

#[test]
fn identity_kernel_is_identity() {
    let mut r = rng(1);
    let x = random_tensor(&mut r, Shape::new(2, 1, 5, 7));
    let mut p = ConvParams::<f64>::zeros(1, 1, 1, 1, 0);
    p.weight.data_mut()[0] = 1.0;
    assert_eq!(conv2d(&x, &p).unwrap(), x);
}

#[test]
fn conv2d_rejects_bad_geometry() {
    let x = Tensor::<f32>::zeros(Shape::new(1, 2, 5, 5));
    assert!(conv2d(&x, &ConvParams::zeros(3, 1, 3, 1, 1)).is_err());
    assert!(conv2d(&x, &ConvParams::zeros(2, 1, 7, 1, 0)).is_err());
    assert!(conv2d(&Tensor::<f32>::zeros(Shape::new(1, 2, 6, 6)), &ConvParams::zeros(2, 1, 3, 2, 1)).is_err());
}

#[test]
fn transposed_conv_upsampler_shapes() {
    let x = Tensor::<f32>::zeros(Shape::new(1, 64, 24, 24));
    let p = ConvParams::<f32>::zeros_transposed(64, 64, 6, 2, 2);
    assert_eq!(conv2d_transpose(&x, &p).unwrap().shape(), Shape::new(1, 64, 48, 48));
    let x = Tensor::<f32>::zeros(Shape::new(1, 64, 16, 16));
    let p = ConvParams::<f32>::zeros_transposed(64, 64, 9, 3, 3);
    assert_eq!(conv2d_transpose(&x, &p).unwrap().shape(), Shape::new(1, 64, 48, 48));
    assert!(conv2d_transpose(&Tensor::<f32>::zeros(Shape::new(1, 3, 4, 4)), &p).is_err());
}

#[test]
fn pixel_shuffle_examples() {
    let x = Tensor::<f32>::new(Shape::new(1, 4, 1, 1), vec![0.0, 1.0, 2.0, 3.0]).unwrap();
    let y = pixel_shuffle(&x, 2).unwrap();
    assert_eq!(y.shape(), Shape::new(1, 1, 2, 2));
    assert_eq!(y.data(), &[0.0, 1.0, 2.0, 3.0]);

    let mut r = rng(2);
    let x = random_tensor(&mut r, Shape::new(1, 3, 4, 4));
    assert_eq!(pixel_shuffle(&x, 1).unwrap(), x);

    let x = Tensor::<f32>::zeros(Shape::new(1, 256, 24, 24));
    assert_eq!(pixel_shuffle(&x, 2).unwrap().shape(), Shape::new(1, 64, 48, 48));
    assert!(pixel_shuffle(&Tensor::<f32>::zeros(Shape::new(1, 6, 2, 2)), 2).is_err());
}

#[test]
fn concat_examples() {
    let mut r = rng(3);
    let a = random_tensor(&mut r, Shape::new(1, 64, 8, 8));
    let b = random_tensor(&mut r, Shape::new(1, 64, 8, 8));
    assert_eq!(ops::concat_channels(&[&a]).unwrap(), a);
    let y = ops::concat_channels(&[&a, &b]).unwrap();
    assert_eq!(y.shape(), Shape::new(1, 128, 8, 8));
    let parts = ops::split_channels(&y, &[64, 64]).unwrap();
    assert_eq!(parts[0], a);
    assert_eq!(parts[1], b);
    let c = Tensor::<f64>::zeros(Shape::new(1, 2, 8, 7));
    assert!(ops::concat_channels(&[&a, &c]).is_err());
}

#[test]
fn relu_add_and_l1_examples() {
    let x = Tensor::<f32>::new(Shape::new(1, 1, 1, 3), vec![-1.0, 0.0, 2.0]).unwrap();
    assert_eq!(ops::relu(&x).data(), &[0.0, 0.0, 2.0]);
    assert_eq!(ops::relu_backward(&x, &[1.0, 1.0, 1.0]), vec![0.0, 0.0, 1.0]);

    let mut r = rng(4);
    let a = random_tensor(&mut r, Shape::new(1, 2, 3, 3));
    let neg = Tensor::from_fn(a.shape(), |i| -a.data()[i]);
    assert_eq!(ops::add(&a, &Tensor::zeros(a.shape())).unwrap(), a);
    assert!(ops::add(&a, &neg).unwrap().data().iter().all(|&v| v == 0.0));
    assert!(ops::add(&a, &Tensor::zeros(Shape::new(1, 2, 3, 4))).is_err());

    assert_eq!(ops::l1_loss(&a, &a).unwrap(), 0.0);
    let shifted = Tensor::from_fn(a.shape(), |i| a.data()[i] + 0.5);
    assert!((ops::l1_loss(&shifted, &a).unwrap() - 0.5).abs() < 1e-12);
    assert!(ops::l1_loss_backward(&a, &a, 1.0).iter().all(|&g| g == 0.0));
    assert!(ops::l1_loss(&a, &Tensor::zeros(Shape::new(1, 2, 3, 4))).is_err());
}

#[test]
fn backward_of_sum_is_all_ones() {
    let mut tape = Tape::<f32>::new();
    let x = tape.leaf(Tensor::full(Shape::new(1, 2, 3, 3), 0.7), true);
    let s = tape.sum(x);
    let g = tape.backward(s).unwrap();
    assert!(g.get(x).unwrap().iter().all(|&v| v == 1.0));
}

#[test]
fn backward_rejects_non_scalar() {
    let mut tape = Tape::<f32>::new();
    let x = tape.leaf(Tensor::zeros(Shape::new(1, 1, 2, 2)), true);
    let y = tape.relu(x);
    assert!(tape.backward(y).is_err());
}

#[test]
fn fan_out_accumulates_both_branches() {
    // loss = sum(relu(x)) + sum(x + x); d/dx = [x > 0] + 2.
    let data = vec![-1.0f32, 0.5, 2.0, -0.25];
    let mut tape = Tape::<f32>::new();
    let x = tape.leaf(Tensor::new(Shape::new(1, 1, 2, 2), data.clone()).unwrap(), true);
    let r = tape.relu(x);
    let d = tape.add(x, x).unwrap();
    let both = tape.add(r, d).unwrap();
    let s = tape.sum(both);
    let g = tape.backward(s).unwrap();
    let want: Vec<f32> = data.iter().map(|&v| if v > 0.0 { 3.0 } else { 2.0 }).collect();
    assert_eq!(g.get(x).unwrap(), want.as_slice());
}

/// Central differences of l1(conv2d(x, p), t) in f64 against the f32 tape.
#[test]
fn conv_weight_gradient_matches_finite_differences() {
    let mut r = rng(5);
    let x = random_tensor(&mut r, Shape::new(1, 2, 5, 5));
    let p = params(&mut r, 2, 3, 3, 1, 1);
    let y0 = conv2d(&x, &p).unwrap();
    // Keep every residual at least 0.5 from zero so the loss is smooth.
    let t = Tensor::from_fn(y0.shape(), |i| y0.data()[i] + if i % 2 == 0 { 1.0 } else { -1.0 });

    let (xf, wf, bf, tf) = (x.cast::<f32>(), p.weight.cast::<f32>(), p.bias.cast::<f32>(), t.cast::<f32>());
    let mut tape = Tape::<f32>::new();
    let xv = tape.constant(&xf);
    let wv = tape.param(&wf);
    let bv = tape.param(&bf);
    let tv = tape.constant(&tf);
    let y = tape.conv2d(xv, wv, bv, 1, 1).unwrap();
    let loss = tape.l1_loss(y, tv).unwrap();
    let grads = tape.backward(loss).unwrap();
    let analytic = grads.get(wv).unwrap();

    let eps = 1e-3;
    for i in 0..p.weight.numel() {
        let mut plus = p.clone();
        plus.weight.data_mut()[i] += eps;
        let mut minus = p.clone();
        minus.weight.data_mut()[i] -= eps;
        let numeric = (ops::l1_loss(&conv2d(&x, &plus).unwrap(), &t).unwrap()
            - ops::l1_loss(&conv2d(&x, &minus).unwrap(), &t).unwrap())
            / (2.0 * eps);
        let a = analytic[i] as f64;
        let scale = a.abs().max(numeric.abs());
        if scale > 1e-6 {
            assert!((a - numeric).abs() / scale < 1e-3, "weight {i}: {a} vs {numeric}");
        }
    }
}

#[test]
fn gradient_suite_passes_on_several_seeds() {
    for seed in 0..3 {
        for name in ["conv2d", "conv2d_transpose", "pixel_shuffle", "concat_channels", "relu", "add", "l1_loss", "sum"] {
            let report = dbdn::gradcheck::check(name, seed, None).unwrap();
            assert!(report.passed(), "{name} seed {seed}: {}", report.max_rel_error);
        }
    }
}

fn tape_run(x: &Tensor<f32>, p: &ConvParams<f32>, t: &Tensor<f32>) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let mut tape = Tape::<f32>::new();
    let xv = tape.leaf(x.clone(), true);
    let wv = tape.param(&p.weight);
    let bv = tape.param(&p.bias);
    let tv = tape.constant(t);
    let y = tape.conv2d(xv, wv, bv, p.stride, p.padding).unwrap();
    let y = tape.relu(y);
    let l = tape.l1_loss(y, tv).unwrap();
    let out = tape.value(y).data().to_vec();
    let g = tape.backward(l).unwrap();
    (out, g.get(xv).unwrap().to_vec(), g.get(wv).unwrap().to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn conv2d_matches_direct_oracle(
        seed in any::<u64>(),
        cin in 1usize..4, cout in 1usize..4,
        k in prop::sample::select(vec![1usize, 3, 5]),
        stride in 1usize..3, pad in 0usize..3,
        h in 5usize..9, w in 5usize..9,
    ) {
        prop_assume!(h + 2 * pad >= k && w + 2 * pad >= k);
        prop_assume!((h + 2 * pad - k) % stride == 0 && (w + 2 * pad - k) % stride == 0);
        let mut r = rng(seed);
        let x = random_tensor(&mut r, Shape::new(2, cin, h, w));
        let p = params(&mut r, cin, cout, k, stride, pad);
        let got = conv2d(&x, &p).unwrap();
        let want = direct_conv2d(&x, &p.weight, p.bias.data(), stride, pad);
        prop_assert_eq!(got.shape(), want.shape());
        prop_assert!(got.max_abs_diff(&want) < 1e-5);
        // The f32 path agrees with the same oracle.
        let got32 = conv2d(&x.cast::<f32>(), &p.cast::<f32>()).unwrap().cast::<f64>();
        prop_assert!(got32.max_abs_diff(&want) < 1e-5);
    }

    #[test]
    fn conv2d_transpose_is_adjoint_of_conv2d(
        seed in any::<u64>(),
        cin in 1usize..4, cout in 1usize..4,
        k in 1usize..7, stride in 1usize..4, pad in 0usize..3,
        h in 2usize..6, w in 2usize..6,
    ) {
        prop_assume!(2 * pad < k);
        let mut r = rng(seed);
        // Transposed weights (cin, cout, k, k) read as an ordinary conv from cout to cin.
        let mut tp = ConvParams::<f64>::zeros_transposed(cin, cout, k, stride, pad);
        tp.weight = random_tensor(&mut r, tp.weight.shape());
        let x = random_tensor(&mut r, Shape::new(1, cin, h, w));
        let y_shape = ops::conv2d_transpose_shape(x.shape(), &tp).unwrap();
        let y = random_tensor(&mut r, y_shape);
        let mut fp = ConvParams::<f64>::zeros(cout, cin, k, stride, pad);
        fp.weight = tp.weight.clone().reshape(fp.weight.shape()).unwrap();
        // conv2d with (cin, cout, k, k) read as (out=cin, in=cout).
        let lhs = dot(conv2d(&y, &fp).unwrap().data(), x.data());
        let rhs = dot(y.data(), conv2d_transpose(&x, &tp).unwrap().data());
        prop_assert!((lhs - rhs).abs() < 1e-4 * (1.0 + lhs.abs()), "{} vs {}", lhs, rhs);
    }

    #[test]
    fn pixel_shuffle_is_a_permutation(seed in any::<u64>(), a in 1usize..5, c in 1usize..3, h in 1usize..5, w in 1usize..5) {
        let mut r = rng(seed);
        let x = random_tensor(&mut r, Shape::new(2, c * a * a, h, w));
        let y = pixel_shuffle(&x, a).unwrap();
        prop_assert_eq!(y.shape(), Shape::new(2, c, a * h, a * w));
        let mut xs = x.data().to_vec();
        let mut ys = y.data().to_vec();
        xs.sort_by(f64::total_cmp);
        ys.sort_by(f64::total_cmp);
        prop_assert_eq!(xs, ys);
        for n in 0..2 {
            for ch in 0..c {
                for i in 0..h {
                    for j in 0..w {
                        for di in 0..a {
                            for dj in 0..a {
                                prop_assert_eq!(y.at(n, ch, a * i + di, a * j + dj), x.at(n, ch * a * a + di * a + dj, i, j));
                            }
                        }
                    }
                }
            }
        }
        prop_assert_eq!(pixel_unshuffle(&y, a).unwrap(), x);
    }

    #[test]
    fn concat_backward_partitions_upstream(seed in any::<u64>(), widths in prop::collection::vec(1usize..4, 1..4)) {
        let mut r = rng(seed);
        let parts: Vec<Tensor<f64>> = widths.iter().map(|&c| random_tensor(&mut r, Shape::new(1, c, 3, 2))).collect();
        let total: usize = widths.iter().sum();
        let offsets = random_tensor(&mut r, Shape::new(1, total, 3, 2));
        let mut tape = Tape::<f64>::new();
        let vars: Vec<_> = parts.iter().map(|p| tape.leaf(p.clone(), true)).collect();
        let y = tape.concat(&vars).unwrap();
        // Residual y − t == offsets, so dL/dy = sign(offsets) / numel.
        let target = Tensor::from_fn(offsets.shape(), |i| tape.value(y).data()[i] - offsets.data()[i]);
        let tv = tape.leaf(target, false);
        let loss = tape.l1_loss(y, tv).unwrap();
        let g = tape.backward(loss).unwrap();
        let n = offsets.numel() as f64;
        let upstream = Tensor::from_fn(offsets.shape(), |i| offsets.data()[i].signum() / n);
        let expected = ops::split_channels(&upstream, &widths).unwrap();
        let mut joined = Vec::new();
        for (v, want) in vars.iter().zip(&expected) {
            let gi = g.get(*v).unwrap();
            prop_assert_eq!(gi, want.data());
            joined.extend_from_slice(gi);
        }
        // Batch 1 keeps the channel-major order, so the pieces tile the upstream buffer.
        let norm_parts: f64 = joined.iter().map(|e| e * e).sum();
        let norm_up: f64 = upstream.data().iter().map(|e| e * e).sum();
        prop_assert_eq!(norm_parts, norm_up);
    }

    #[test]
    fn tape_replay_is_bit_identical(seed in any::<u64>()) {
        let mut r = rng(seed);
        let x = random_tensor(&mut r, Shape::new(1, 2, 5, 5)).cast::<f32>();
        let p = params(&mut r, 2, 3, 3, 1, 1).cast::<f32>();
        let t = Tensor::<f32>::from_fn(Shape::new(1, 3, 5, 5), |_| r.gen_range(-1.0..1.0));
        prop_assert_eq!(tape_run(&x, &p, &t), tape_run(&x, &p, &t));
    }
}
