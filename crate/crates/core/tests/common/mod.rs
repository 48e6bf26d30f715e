#![allow(dead_code)]

use std::path::PathBuf;

use dbdn::data::ImageRgb;
use dbdn::{Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures")
}

pub fn corpus_dir() -> PathBuf {
    fixtures().join("corpus")
}

pub fn val_dir() -> PathBuf {
    fixtures().join("val")
}

pub fn overfit_image() -> ImageRgb {
    ImageRgb::load(fixtures().join("overfit.png")).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: Shape) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

pub fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> ImageRgb {
    ImageRgb::from_fn(h, w, |_, _, _| rng.gen_range(0.0f32..1.0))
}

/// Direct convolution with zero padding, one output element at a time.
pub fn direct_conv2d(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], stride: usize, pad: usize) -> Tensor<f64> {
    let xs = x.shape();
    let ws = w.shape();
    let oh = (xs.h + 2 * pad - ws.h) / stride + 1;
    let ow = (xs.w + 2 * pad - ws.w) / stride + 1;
    let mut out = Tensor::zeros(Shape::new(xs.n, ws.n, oh, ow));
    for n in 0..xs.n {
        for o in 0..ws.n {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = b[o];
                    for c in 0..xs.c {
                        for ki in 0..ws.h {
                            for kj in 0..ws.w {
                                let y = (i * stride + ki) as isize - pad as isize;
                                let x_ = (j * stride + kj) as isize - pad as isize;
                                if y >= 0 && x_ >= 0 && (y as usize) < xs.h && (x_ as usize) < xs.w {
                                    acc += x.at(n, c, y as usize, x_ as usize) * w.at(o, c, ki, kj);
                                }
                            }
                        }
                    }
                    let idx = out.index(n, o, i, j);
                    out.data_mut()[idx] = acc;
                }
            }
        }
    }
    out
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A smooth, heavily band-limited test image.
pub fn blurred_image(h: usize, w: usize) -> ImageRgb {
    ImageRgb::from_fn(h, w, |y, x, c| {
        let (fy, fx) = (y as f32 / h as f32, x as f32 / w as f32);
        0.5 + 0.2 * (std::f32::consts::TAU * fx + c as f32).sin() * (std::f32::consts::PI * fy).cos()
            + 0.1 * (std::f32::consts::TAU * (fx + fy)).cos()
    })
}
