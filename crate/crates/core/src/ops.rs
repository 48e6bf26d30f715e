//! Forward and backward kernels for the operations the network uses.
//!
//! These are pure functions over [`Tensor`]s. The tape in
//! [`crate::autograd`] records which kernel produced each value and calls
//! the matching backward kernel; inference calls the forward kernels
//! directly.
//!
//! Convolutions are lowered to matrix products: `im2col` unrolls each
//! receptive field into a column and `col2im` scatters columns back,
//! accumulating where fields overlap.

use crate::error::{Error, Result};
use crate::tensor::{conv_out_extent, conv_transpose_out_extent, ConvParams, Element, Shape, Tensor};

/// Geometry shared by a convolution and its adjoint: an image of
/// `channels × height × width` viewed through `kernel`-sized windows that
/// produce a `out_h × out_w` grid.
#[derive(Clone, Copy, Debug)]
struct Window {
    channels: usize,
    height: usize,
    width: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
}

impl Window {
    fn rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Output columns `lo..hi` whose tap `kj` lands inside the image.
    fn valid_columns(&self, kj: usize) -> (usize, usize) {
        // ox·stride + kj − padding ∈ [0, width)
        let lo = self.padding.saturating_sub(kj).div_ceil(self.stride);
        let limit = self.width + self.padding - kj; // exclusive bound on ox·stride
        let hi = if self.width + self.padding <= kj { 0 } else { limit.div_ceil(self.stride) };
        let hi = hi.min(self.out_w);
        (lo.min(hi), hi)
    }

    /// A 1×1, stride-1, unpadded window needs no unrolling.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.padding == 0
    }
}

fn im2col<E: Element>(image: &[E], g: &Window, cols: &mut [E]) {
    let n_cols = g.cols();
    for c in 0..g.channels {
        let plane = &image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * n_cols..(row + 1) * n_cols];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    let dst_row = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.height as isize {
                        dst_row.fill(E::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    let (lo, hi) = g.valid_columns(kj);
                    dst_row[..lo].fill(E::zero());
                    dst_row[hi..].fill(E::zero());
                    let first = lo * g.stride + kj - g.padding;
                    if g.stride == 1 {
                        dst_row[lo..hi].copy_from_slice(&src[first..first + (hi - lo)]);
                    } else {
                        for (d, ix) in dst_row[lo..hi].iter_mut().zip((first..).step_by(g.stride)) {
                            *d = src[ix];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates every column entry into `image`.
fn col2im<E: Element>(cols: &[E], g: &Window, image: &mut [E]) {
    let n_cols = g.cols();
    for c in 0..g.channels {
        let plane = &mut image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * n_cols..(row + 1) * n_cols];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    let (lo, hi) = g.valid_columns(kj);
                    let first = lo * g.stride + kj - g.padding;
                    let src_row = &src[oy * g.out_w + lo..oy * g.out_w + hi];
                    if g.stride == 1 {
                        for (d, &v) in dst[first..first + (hi - lo)].iter_mut().zip(src_row) {
                            *d = *d + v;
                        }
                    } else {
                        for (&v, ix) in src_row.iter().zip((first..).step_by(g.stride)) {
                            dst[ix] = dst[ix] + v;
                        }
                    }
                }
            }
        }
    }
}

/// Row-major `c (m×n) = a (m×k) · b (k×n) + beta · c`, with optional transposes
/// of the stored operands.
#[allow(clippy::too_many_arguments)]
fn matmul<E: Element>(
    m: usize,
    k: usize,
    n: usize,
    a: &[E],
    a_transposed: bool,
    b: &[E],
    b_transposed: bool,
    beta: E,
    c: &mut [E],
) {
    let (rsa, csa) = if a_transposed { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_transposed { (1, k as isize) } else { (n as isize, 1) };
    E::gemm(m, k, n, a, rsa, csa, b, rsb, csb, beta, c, n as isize, 1);
}

fn check_bias<E: Element>(op: &'static str, bias: &Tensor<E>, out_channels: usize) -> Result<()> {
    if bias.numel() != out_channels {
        return Err(Error::shape(op, format!("bias has {} entries for {out_channels} output channels", bias.numel())));
    }
    Ok(())
}

fn conv_window<E: Element>(x: Shape, weight: &Tensor<E>, stride: usize, padding: usize) -> Result<Window> {
    let w = weight.shape();
    if x.c != w.c {
        return Err(Error::shape(
            "conv2d",
            format!("input has {} channels, weight {} expects {}", x.c, w, w.c),
        ));
    }
    Ok(Window {
        channels: x.c,
        height: x.h,
        width: x.w,
        kh: w.h,
        kw: w.w,
        stride,
        padding,
        out_h: conv_out_extent(x.h, w.h, stride, padding)?,
        out_w: conv_out_extent(x.w, w.w, stride, padding)?,
    })
}

/// Shape produced by [`conv2d`] without running it.
pub fn conv2d_shape<E: Element>(x: Shape, p: &ConvParams<E>) -> Result<Shape> {
    let g = conv_window(x, &p.weight, p.stride, p.padding)?;
    check_bias("conv2d", &p.bias, p.weight.shape().n)?;
    Ok(Shape::new(x.n, p.weight.shape().n, g.out_h, g.out_w))
}

pub fn conv2d<E: Element>(x: &Tensor<E>, p: &ConvParams<E>) -> Result<Tensor<E>> {
    conv2d_raw(x, &p.weight, &p.bias, p.stride, p.padding)
}

pub(crate) fn conv2d_raw<E: Element>(
    x: &Tensor<E>,
    weight: &Tensor<E>,
    bias: &Tensor<E>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<E>> {
    let xs = x.shape();
    let g = conv_window(xs, weight, stride, padding)?;
    let out_c = weight.shape().n;
    check_bias("conv2d", bias, out_c)?;
    let out_shape = Shape::new(xs.n, out_c, g.out_h, g.out_w);
    let mut out = Tensor::zeros(out_shape);
    let (k, p) = (g.rows(), g.cols());
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![E::zero(); k * p] };
    for n in 0..xs.n {
        let image = &x.data()[n * xs.item()..(n + 1) * xs.item()];
        let y = &mut out.data_mut()[n * out_shape.item()..(n + 1) * out_shape.item()];
        for (c, row) in y.chunks_mut(p).enumerate() {
            row.fill(bias.data()[c]);
        }
        let rhs = if g.is_pointwise() {
            image
        } else {
            im2col(image, &g, &mut cols);
            &cols
        };
        matmul(out_c, k, p, weight.data(), false, rhs, false, E::one(), y);
    }
    Ok(out)
}

pub struct ConvGrads<E> {
    pub input: Option<Tensor<E>>,
    pub weight: Tensor<E>,
    pub bias: Tensor<E>,
}

/// Gradients of [`conv2d`] given the upstream gradient `dy`.
pub fn conv2d_backward<E: Element>(
    x: &Tensor<E>,
    weight: &Tensor<E>,
    stride: usize,
    padding: usize,
    dy: &Tensor<E>,
    need_input: bool,
) -> Result<ConvGrads<E>> {
    let xs = x.shape();
    let g = conv_window(xs, weight, stride, padding)?;
    let out_c = weight.shape().n;
    let ys = dy.shape();
    if ys != Shape::new(xs.n, out_c, g.out_h, g.out_w) {
        return Err(Error::shape("conv2d_backward", format!("upstream gradient {ys} does not match output")));
    }
    let (k, p) = (g.rows(), g.cols());
    let mut dw = Tensor::zeros(weight.shape());
    let mut db = Tensor::zeros(Shape::new(1, out_c, 1, 1));
    let mut dx = need_input.then(|| Tensor::zeros(xs));
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![E::zero(); k * p] };
    for n in 0..xs.n {
        let image = &x.data()[n * xs.item()..(n + 1) * xs.item()];
        let dyn_ = &dy.data()[n * ys.item()..(n + 1) * ys.item()];
        for (c, row) in dyn_.chunks(p).enumerate() {
            let s: E = row.iter().copied().sum();
            db.data_mut()[c] = db.data()[c] + s;
        }
        let unrolled = if g.is_pointwise() {
            image
        } else {
            im2col(image, &g, &mut cols);
            &cols
        };
        // dW (out×k) += dY (out×p) · colsᵀ (p×k)
        matmul(out_c, p, k, dyn_, false, unrolled, true, E::one(), dw.data_mut());
        if let Some(dx) = dx.as_mut() {
            let dxn = &mut dx.data_mut()[n * xs.item()..(n + 1) * xs.item()];
            if g.is_pointwise() {
                // dX (k×p) = Wᵀ (k×out) · dY (out×p)
                matmul(k, out_c, p, weight.data(), true, dyn_, false, E::zero(), dxn);
            } else {
                matmul(k, out_c, p, weight.data(), true, dyn_, false, E::zero(), &mut cols);
                col2im(&cols, &g, dxn);
            }
        }
    }
    Ok(ConvGrads { input: dx, weight: dw, bias: db })
}

/// The window of the ordinary convolution whose adjoint is the requested
/// transposed convolution: it maps the (large) output back onto the input grid.
fn transpose_window<E: Element>(x: Shape, weight: &Tensor<E>, stride: usize, padding: usize) -> Result<Window> {
    let w = weight.shape();
    if x.c != w.n {
        return Err(Error::shape(
            "conv2d_transpose",
            format!("input has {} channels, weight {} expects {}", x.c, w, w.n),
        ));
    }
    let out_h = conv_transpose_out_extent(x.h, w.h, stride, padding)?;
    let out_w = conv_transpose_out_extent(x.w, w.w, stride, padding)?;
    Ok(Window {
        channels: w.c,
        height: out_h,
        width: out_w,
        kh: w.h,
        kw: w.w,
        stride,
        padding,
        out_h: x.h,
        out_w: x.w,
    })
}

pub fn conv2d_transpose_shape<E: Element>(x: Shape, p: &ConvParams<E>) -> Result<Shape> {
    let g = transpose_window(x, &p.weight, p.stride, p.padding)?;
    check_bias("conv2d_transpose", &p.bias, p.weight.shape().c)?;
    Ok(Shape::new(x.n, g.channels, g.height, g.width))
}

/// Transposed convolution with weight laid out (in, out, kh, kw).
pub fn conv2d_transpose<E: Element>(x: &Tensor<E>, p: &ConvParams<E>) -> Result<Tensor<E>> {
    conv2d_transpose_raw(x, &p.weight, &p.bias, p.stride, p.padding)
}

pub(crate) fn conv2d_transpose_raw<E: Element>(
    x: &Tensor<E>,
    weight: &Tensor<E>,
    bias: &Tensor<E>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<E>> {
    let xs = x.shape();
    let g = transpose_window(xs, weight, stride, padding)?;
    check_bias("conv2d_transpose", bias, g.channels)?;
    let in_c = xs.c;
    let out_shape = Shape::new(xs.n, g.channels, g.height, g.width);
    let mut out = Tensor::zeros(out_shape);
    let (k, p) = (g.rows(), g.cols());
    let mut cols = vec![E::zero(); k * p];
    for n in 0..xs.n {
        let image = &x.data()[n * xs.item()..(n + 1) * xs.item()];
        // cols (k×p) = W'ᵀ (k×in) · X (in×p), W' the weight viewed as in×k
        matmul(k, in_c, p, weight.data(), true, image, false, E::zero(), &mut cols);
        let y = &mut out.data_mut()[n * out_shape.item()..(n + 1) * out_shape.item()];
        col2im(&cols, &g, y);
        for (c, plane) in y.chunks_mut(out_shape.plane()).enumerate() {
            let b = bias.data()[c];
            plane.iter_mut().for_each(|v| *v = *v + b);
        }
    }
    Ok(out)
}

pub fn conv2d_transpose_backward<E: Element>(
    x: &Tensor<E>,
    weight: &Tensor<E>,
    stride: usize,
    padding: usize,
    dy: &Tensor<E>,
    need_input: bool,
) -> Result<ConvGrads<E>> {
    let xs = x.shape();
    let g = transpose_window(xs, weight, stride, padding)?;
    let ys = dy.shape();
    if ys != Shape::new(xs.n, g.channels, g.height, g.width) {
        return Err(Error::shape(
            "conv2d_transpose_backward",
            format!("upstream gradient {ys} does not match output"),
        ));
    }
    let in_c = xs.c;
    let (k, p) = (g.rows(), g.cols());
    let mut dw = Tensor::zeros(weight.shape());
    let mut db = Tensor::zeros(Shape::new(1, g.channels, 1, 1));
    let mut dx = need_input.then(|| Tensor::zeros(xs));
    let mut cols = vec![E::zero(); k * p];
    for n in 0..xs.n {
        let image = &x.data()[n * xs.item()..(n + 1) * xs.item()];
        let dyn_ = &dy.data()[n * ys.item()..(n + 1) * ys.item()];
        for (c, plane) in dyn_.chunks(ys.plane()).enumerate() {
            let s: E = plane.iter().copied().sum();
            db.data_mut()[c] = db.data()[c] + s;
        }
        im2col(dyn_, &g, &mut cols);
        // dW' (in×k) += X (in×p) · colsᵀ (p×k)
        matmul(in_c, p, k, image, false, &cols, true, E::one(), dw.data_mut());
        if let Some(dx) = dx.as_mut() {
            let dxn = &mut dx.data_mut()[n * xs.item()..(n + 1) * xs.item()];
            // dX (in×p) = W' (in×k) · cols (k×p)
            matmul(in_c, k, p, weight.data(), false, &cols, false, E::zero(), dxn);
        }
    }
    Ok(ConvGrads { input: dx, weight: dw, bias: db })
}

pub fn pixel_shuffle_shape(x: Shape, scale: usize) -> Result<Shape> {
    if scale == 0 || x.c % (scale * scale) != 0 {
        return Err(Error::shape(
            "pixel_shuffle",
            format!("{} channels not divisible by {}²", x.c, scale),
        ));
    }
    Ok(Shape::new(x.n, x.c / (scale * scale), x.h * scale, x.w * scale))
}

/// Moves each group of `scale²` channels into a `scale × scale` spatial block:
/// output (n, c, a·i+di, a·j+dj) comes from input channel c·a² + di·a + dj at (i, j).
pub fn pixel_shuffle<E: Element>(x: &Tensor<E>, scale: usize) -> Result<Tensor<E>> {
    let xs = x.shape();
    let os = pixel_shuffle_shape(xs, scale)?;
    let mut out = Tensor::zeros(os);
    let src = x.data();
    let dst = out.data_mut();
    for n in 0..xs.n {
        for c in 0..os.c {
            for di in 0..scale {
                for dj in 0..scale {
                    let ic = c * scale * scale + di * scale + dj;
                    for i in 0..xs.h {
                        let src_row = ((n * xs.c + ic) * xs.h + i) * xs.w;
                        let dst_row = ((n * os.c + c) * os.h + i * scale + di) * os.w;
                        for j in 0..xs.w {
                            dst[dst_row + j * scale + dj] = src[src_row + j];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`pixel_shuffle`]; also its gradient.
pub fn pixel_unshuffle<E: Element>(y: &Tensor<E>, scale: usize) -> Result<Tensor<E>> {
    let ys = y.shape();
    if scale == 0 || ys.h % scale != 0 || ys.w % scale != 0 {
        return Err(Error::shape("pixel_unshuffle", format!("{ys} not divisible by {scale}")));
    }
    let xs = Shape::new(ys.n, ys.c * scale * scale, ys.h / scale, ys.w / scale);
    let mut out = Tensor::zeros(xs);
    let src = y.data();
    let dst = out.data_mut();
    for n in 0..xs.n {
        for c in 0..ys.c {
            for di in 0..scale {
                for dj in 0..scale {
                    let oc = c * scale * scale + di * scale + dj;
                    for i in 0..xs.h {
                        let dst_row = ((n * xs.c + oc) * xs.h + i) * xs.w;
                        let src_row = ((n * ys.c + c) * ys.h + i * scale + di) * ys.w;
                        for j in 0..xs.w {
                            dst[dst_row + j] = src[src_row + j * scale + dj];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn concat_shape(shapes: &[Shape]) -> Result<Shape> {
    let first = *shapes.first().ok_or_else(|| Error::shape("concat_channels", "no inputs"))?;
    let mut c = 0;
    for s in shapes {
        if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
            return Err(Error::shape("concat_channels", format!("{s} does not match {first} outside channels")));
        }
        c += s.c;
    }
    Ok(first.with_channels(c))
}

/// Concatenates along channels in argument order.
pub fn concat_channels<E: Element>(xs: &[&Tensor<E>]) -> Result<Tensor<E>> {
    let shapes: Vec<Shape> = xs.iter().map(|t| t.shape()).collect();
    let os = concat_shape(&shapes)?;
    let mut data = Vec::with_capacity(os.numel());
    for n in 0..os.n {
        for t in xs {
            let item = t.shape().item();
            data.extend_from_slice(&t.data()[n * item..(n + 1) * item]);
        }
    }
    Tensor::new(os, data)
}

/// Splits `y` along channels at the given widths; the gradient of
/// [`concat_channels`].
pub fn split_channels<E: Element>(y: &Tensor<E>, widths: &[usize]) -> Result<Vec<Tensor<E>>> {
    let ys = y.shape();
    if widths.iter().sum::<usize>() != ys.c || widths.contains(&0) {
        return Err(Error::shape("split_channels", format!("widths {widths:?} do not partition {ys}")));
    }
    let mut parts: Vec<Vec<E>> = widths.iter().map(|&c| Vec::with_capacity(c * ys.plane() * ys.n)).collect();
    for n in 0..ys.n {
        let mut offset = n * ys.item();
        for (part, &c) in parts.iter_mut().zip(widths) {
            let len = c * ys.plane();
            part.extend_from_slice(&y.data()[offset..offset + len]);
            offset += len;
        }
    }
    parts
        .into_iter()
        .zip(widths)
        .map(|(data, &c)| Tensor::new(ys.with_channels(c), data))
        .collect()
}

pub fn relu<E: Element>(x: &Tensor<E>) -> Tensor<E> {
    Tensor::new(x.shape(), x.data().iter().map(|&v| v.max(E::zero())).collect()).expect("same shape")
}

/// Passes `dy` where the forward input was strictly positive.
pub fn relu_backward<E: Element>(x: &Tensor<E>, dy: &[E]) -> Vec<E> {
    x.data()
        .iter()
        .zip(dy)
        .map(|(&v, &g)| if v > E::zero() { g } else { E::zero() })
        .collect()
}

pub fn add<E: Element>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    if a.shape() != b.shape() {
        return Err(Error::shape("add", format!("{} vs {}", a.shape(), b.shape())));
    }
    Tensor::new(a.shape(), a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect())
}

/// Mean absolute difference.
pub fn l1_loss<E: Element>(pred: &Tensor<E>, target: &Tensor<E>) -> Result<E> {
    if pred.shape() != target.shape() {
        return Err(Error::shape("l1_loss", format!("{} vs {}", pred.shape(), target.shape())));
    }
    let total: E = pred.data().iter().zip(target.data()).map(|(&p, &t)| (p - t).abs()).sum();
    Ok(total / E::of_f64(pred.numel() as f64))
}

/// d(mean |p − t|)/dp scaled by `upstream`; ties get a zero sub-gradient.
pub fn l1_loss_backward<E: Element>(pred: &Tensor<E>, target: &Tensor<E>, upstream: E) -> Vec<E> {
    let scale = upstream / E::of_f64(pred.numel() as f64);
    pred.data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            if p > t {
                scale
            } else if p < t {
                -scale
            } else {
                E::zero()
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    /// Direct six-nested-loop convolution, independent of im2col/gemm.
    fn conv_oracle(x: &Tensor<f64>, p: &ConvParams<f64>) -> Tensor<f64> {
        let (xs, ws) = (x.shape(), p.weight.shape());
        let oh = (xs.h + 2 * p.padding - ws.h) / p.stride + 1;
        let ow = (xs.w + 2 * p.padding - ws.w) / p.stride + 1;
        let mut out = Tensor::zeros(Shape::new(xs.n, ws.n, oh, ow));
        for n in 0..xs.n {
            for o in 0..ws.n {
                for y in 0..oh {
                    for x_ in 0..ow {
                        let mut acc = p.bias.data()[o];
                        for c in 0..ws.c {
                            for ki in 0..ws.h {
                                for kj in 0..ws.w {
                                    let iy = (y * p.stride + ki) as isize - p.padding as isize;
                                    let ix = (x_ * p.stride + kj) as isize - p.padding as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < xs.h && (ix as usize) < xs.w {
                                        acc += p.weight.at(o, c, ki, kj) * x.at(n, c, iy as usize, ix as usize);
                                    }
                                }
                            }
                        }
                        let idx = out.index(n, o, y, x_);
                        out.data_mut()[idx] = acc;
                    }
                }
            }
        }
        out
    }

    fn random_conv(in_c: usize, out_c: usize, k: usize, stride: usize, pad: usize, rng: &mut ChaCha8Rng) -> ConvParams<f64> {
        let mut p = ConvParams::zeros(in_c, out_c, k, stride, pad);
        p.weight = random(p.weight.shape(), rng);
        p.bias = random(p.bias.shape(), rng);
        p
    }

    #[test]
    fn conv2d_preserves_extent_with_unit_padding() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 64, 24, 24));
        let p = ConvParams::<f32>::zeros(64, 64, 3, 1, 1);
        assert_eq!(conv2d(&x, &p).unwrap().shape(), Shape::new(1, 64, 24, 24));
    }

    #[test]
    fn conv2d_identity_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(Shape::new(2, 1, 5, 7), &mut rng);
        let mut p = ConvParams::<f64>::zeros(1, 1, 1, 1, 0);
        p.weight.data_mut()[0] = 1.0;
        assert_eq!(conv2d(&x, &p).unwrap(), x);
    }

    #[test]
    fn conv2d_matches_direct_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(Shape::new(1, 2, 5, 5), &mut rng);
        let p = random_conv(2, 3, 3, 1, 1, &mut rng);
        let got = conv2d(&x, &p).unwrap();
        let want = conv_oracle(&x, &p);
        assert_eq!(got.shape(), want.shape());
        assert!(got.max_abs_diff(&want) < 1e-5);
    }

    #[test]
    fn conv2d_matches_oracle_over_geometries() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(c, o, h, w, k, s, pad) in &[
            (3, 4, 6, 5, 3, 1, 1),
            (2, 2, 7, 7, 3, 2, 0),
            (4, 1, 6, 6, 1, 1, 0),
            (1, 3, 8, 6, 5, 1, 2),
            (2, 3, 9, 9, 3, 3, 0),
        ] {
            let x = random(Shape::new(2, c, h, w), &mut rng);
            let p = random_conv(c, o, k, s, pad, &mut rng);
            let got = conv2d(&x, &p).unwrap();
            assert!(got.max_abs_diff(&conv_oracle(&x, &p)) < 1e-5, "geometry {c} {o} {h} {w} {k} {s} {pad}");
        }
    }

    #[test]
    fn conv2d_rejects_bad_shapes() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 3, 4, 4));
        let p = ConvParams::<f32>::zeros(2, 2, 3, 1, 1);
        assert!(matches!(conv2d(&x, &p), Err(Error::Shape { .. })));
        let p = ConvParams::<f32>::zeros(3, 2, 7, 1, 1);
        assert!(conv2d(&x, &p).is_err());
    }

    #[test]
    fn conv_transpose_extents() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 64, 24, 24));
        let p = ConvParams::<f32>::zeros_transposed(64, 64, 6, 2, 2);
        assert_eq!(conv2d_transpose(&x, &p).unwrap().shape(), Shape::new(1, 64, 48, 48));
        let x = Tensor::<f32>::zeros(Shape::new(1, 64, 16, 16));
        let p = ConvParams::<f32>::zeros_transposed(64, 64, 9, 3, 3);
        assert_eq!(conv2d_transpose(&x, &p).unwrap().shape(), Shape::new(1, 64, 48, 48));
    }

    #[test]
    fn conv_transpose_rejects_channel_mismatch() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 3, 4, 4));
        let p = ConvParams::<f32>::zeros_transposed(4, 3, 6, 2, 2);
        assert!(conv2d_transpose(&x, &p).is_err());
    }

    fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn conv_transpose_is_adjoint_of_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for &(cin, cout, small, k, s, pad) in &[(3, 2, 4, 6, 2, 2), (2, 3, 3, 9, 3, 3), (1, 2, 5, 3, 1, 1), (2, 2, 4, 4, 2, 1)] {
            // conv: big (cout ch) -> small (cin ch); conv_t: small -> big, sharing one buffer
            let mut wt = ConvParams::<f64>::zeros_transposed(cin, cout, k, s, pad);
            wt.weight = random(wt.weight.shape(), &mut rng);
            let big = conv_transpose_out_extent(small, k, s, pad).unwrap();
            let conv = ConvParams {
                weight: wt.weight.clone(),
                bias: Tensor::zeros(Shape::new(1, cin, 1, 1)),
                stride: s,
                padding: pad,
            };
            // (in, out, kh, kw) read as an ordinary conv weight maps `out` channels to `in`.
            let y = random(Shape::new(2, cout, big, big), &mut rng);
            let x = random(Shape::new(2, cin, small, small), &mut rng);
            let lhs = dot(&conv2d(&y, &conv).unwrap(), &x);
            let rhs = dot(&y, &conv2d_transpose(&x, &wt).unwrap());
            assert!((lhs - rhs).abs() < 1e-4 * (1.0 + lhs.abs()), "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn pixel_shuffle_cases() {
        let x = Tensor::<f32>::new(Shape::new(1, 4, 1, 1), vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let y = pixel_shuffle(&x, 2).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 2, 2));
        assert_eq!(y.data(), &[0.0, 1.0, 2.0, 3.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(Shape::new(2, 3, 4, 5), &mut rng);
        assert_eq!(pixel_shuffle(&x, 1).unwrap(), x);

        let x = Tensor::<f32>::zeros(Shape::new(1, 256, 24, 24));
        assert_eq!(pixel_shuffle(&x, 2).unwrap().shape(), Shape::new(1, 64, 48, 48));
        assert!(pixel_shuffle(&Tensor::<f32>::zeros(Shape::new(1, 6, 2, 2)), 2).is_err());
    }

    #[test]
    fn pixel_shuffle_index_map() {
        let x = Tensor::<f64>::from_fn(Shape::new(2, 18, 3, 2), |i| i as f64);
        let a = 3;
        let y = pixel_shuffle(&x, a).unwrap();
        for n in 0..2 {
            for c in 0..2 {
                for i in 0..3 {
                    for j in 0..2 {
                        for di in 0..a {
                            for dj in 0..a {
                                assert_eq!(y.at(n, c, a * i + di, a * j + dj), x.at(n, c * a * a + di * a + dj, i, j));
                            }
                        }
                    }
                }
            }
        }
        assert_eq!(pixel_unshuffle(&y, a).unwrap(), x);
    }

    #[test]
    fn concat_and_split() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = random(Shape::new(2, 3, 4, 4), &mut rng);
        let b = random(Shape::new(2, 1, 4, 4), &mut rng);
        assert_eq!(concat_channels(&[&a]).unwrap(), a);
        let y = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(y.shape(), Shape::new(2, 4, 4, 4));
        assert_eq!(y.at(1, 3, 2, 1), b.at(1, 0, 2, 1));
        let parts = split_channels(&y, &[3, 1]).unwrap();
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
        let c = Tensor::<f64>::zeros(Shape::new(2, 1, 4, 5));
        assert!(concat_channels(&[&a, &c]).is_err());

        let wide = Tensor::<f32>::zeros(Shape::new(1, 64, 8, 8));
        assert_eq!(concat_channels(&[&wide, &wide]).unwrap().shape(), Shape::new(1, 128, 8, 8));
    }

    #[test]
    fn relu_cases() {
        let x = Tensor::<f32>::new(Shape::new(1, 1, 1, 3), vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        assert_eq!(relu_backward(&x, &[5.0, 5.0, 5.0]), vec![0.0, 0.0, 5.0]);
        let neg = Tensor::<f32>::full(Shape::new(1, 2, 2, 2), -0.5);
        assert!(relu(&neg).data().iter().all(|&v| v == 0.0));
        let pos = Tensor::<f32>::full(Shape::new(1, 2, 2, 2), 0.5);
        assert_eq!(relu(&pos), pos);
    }

    #[test]
    fn add_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random(Shape::new(1, 2, 3, 3), &mut rng);
        let y = random(Shape::new(1, 2, 3, 3), &mut rng);
        assert_eq!(add(&x, &Tensor::zeros(x.shape())).unwrap(), x);
        let neg = Tensor::new(x.shape(), x.data().iter().map(|v| -v).collect()).unwrap();
        assert!(add(&x, &neg).unwrap().data().iter().all(|&v| v == 0.0));
        let s = add(&x, &y).unwrap();
        for i in 0..s.numel() {
            assert_eq!(s.data()[i], x.data()[i] + y.data()[i]);
        }
        assert!(add(&x, &Tensor::zeros(Shape::new(1, 2, 3, 4))).is_err());
    }

    #[test]
    fn l1_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let t = random(Shape::new(1, 3, 4, 4), &mut rng);
        assert_eq!(l1_loss(&t, &t).unwrap(), 0.0);
        let p = Tensor::new(t.shape(), t.data().iter().map(|v| v + 0.5).collect()).unwrap();
        assert!((l1_loss(&p, &t).unwrap() - 0.5).abs() < 1e-12);
        assert!(l1_loss_backward(&t, &t, 1.0).iter().all(|&g| g == 0.0));
        assert!(l1_loss(&t, &Tensor::zeros(Shape::new(1, 3, 4, 5))).is_err());
    }
}
