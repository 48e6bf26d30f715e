//! Dense 4-D tensors stored row-major in (batch, channel, height, width) order.
//!
//! Everything in the network is a [`Tensor`]: images, feature maps, conv
//! weights (out, in, kh, kw) and biases (1, out, 1, 1). The element type is
//! generic so the same kernels can run in `f32` for training and in `f64`
//! for finite-difference oracles.

use std::fmt;

use num_traits::Float;

use crate::error::{Error, Result};

/// Scalar type a [`Tensor`] can hold.
pub trait Element:
    Float + Default + Send + Sync + fmt::Debug + fmt::Display + std::iter::Sum + 'static
{
    /// `c = a * b + beta * c` for row/column-strided matrices,
    /// `a` is m×k, `b` is k×n, `c` is m×n.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );

    fn of_f64(v: f64) -> Self;

    fn as_f64(self) -> f64;
}

macro_rules! check_gemm_bounds {
    ($m:expr, $k:expr, $n:expr, $a:expr, $rsa:expr, $csa:expr, $b:expr, $rsb:expr, $csb:expr, $c:expr, $rsc:expr, $csc:expr) => {{
        fn last(rows: usize, cols: usize, rs: isize, cs: isize) -> usize {
            if rows == 0 || cols == 0 {
                return 0;
            }
            (rows - 1) * rs as usize + (cols - 1) * cs as usize + 1
        }
        assert!(last($m, $k, $rsa, $csa) <= $a.len(), "gemm: lhs out of bounds");
        assert!(last($k, $n, $rsb, $csb) <= $b.len(), "gemm: rhs out of bounds");
        assert!(last($m, $n, $rsc, $csc) <= $c.len(), "gemm: output out of bounds");
        assert!($rsa >= 0 && $csa >= 0 && $rsb >= 0 && $csb >= 0 && $rsc >= 0 && $csc >= 0);
    }};
}

impl Element for f32 {
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[f32],
        rsa: isize,
        csa: isize,
        b: &[f32],
        rsb: isize,
        csb: isize,
        beta: f32,
        c: &mut [f32],
        rsc: isize,
        csc: isize,
    ) {
        check_gemm_bounds!(m, k, n, a, rsa, csa, b, rsb, csb, c, rsc, csc);
        // SAFETY: every index touched by the kernel was bounds-checked above.
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                rsc,
                csc,
            );
        }
    }

    fn of_f64(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Element for f64 {
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[f64],
        rsa: isize,
        csa: isize,
        b: &[f64],
        rsb: isize,
        csb: isize,
        beta: f64,
        c: &mut [f64],
        rsc: isize,
        csc: isize,
    ) {
        check_gemm_bounds!(m, k, n, a, rsa, csa, b, rsb, csb, c, rsc, csc);
        // SAFETY: every index touched by the kernel was bounds-checked above.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                rsc,
                csc,
            );
        }
    }

    fn of_f64(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub const fn scalar() -> Self {
        Shape::new(1, 1, 1, 1)
    }

    pub const fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    /// Elements in one batch item.
    pub const fn item(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn is_valid(&self) -> bool {
        self.n >= 1 && self.c >= 1 && self.h >= 1 && self.w >= 1
    }

    pub fn with_channels(self, c: usize) -> Self {
        Shape { c, ..self }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

/// A 4-D value with an optional gradient buffer of the same shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<E = f32> {
    shape: Shape,
    data: Vec<E>,
    grad: Option<Vec<E>>,
}

impl<E: Element> Tensor<E> {
    pub fn new(shape: Shape, data: Vec<E>) -> Result<Self> {
        if !shape.is_valid() {
            return Err(Error::shape("tensor", format!("every dimension must be >= 1, got {shape}")));
        }
        if data.len() != shape.numel() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape} needs {} elements, got {}", shape.numel(), data.len()),
            ));
        }
        Ok(Tensor { shape, data, grad: None })
    }

    pub fn zeros(shape: Shape) -> Self {
        assert!(shape.is_valid(), "zero-sized tensor shape {shape}");
        Tensor { shape, data: vec![E::zero(); shape.numel()], grad: None }
    }

    pub fn full(shape: Shape, value: E) -> Self {
        assert!(shape.is_valid(), "zero-sized tensor shape {shape}");
        Tensor { shape, data: vec![value; shape.numel()], grad: None }
    }

    pub fn scalar(value: E) -> Self {
        Tensor { shape: Shape::scalar(), data: vec![value], grad: None }
    }

    /// Builds a tensor from a closure over flat indices.
    pub fn from_fn(shape: Shape, f: impl FnMut(usize) -> E) -> Self {
        assert!(shape.is_valid(), "zero-sized tensor shape {shape}");
        Tensor { shape, data: (0..shape.numel()).map(f).collect(), grad: None }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<E> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Flat index of element (n, c, h, w).
    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        let s = self.shape;
        ((n * s.c + c) * s.h + h) * s.w + w
    }

    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> E {
        self.data[self.index(n, c, h, w)]
    }

    pub fn item(&self) -> Option<E> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn grad(&self) -> Option<&[E]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<E>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(Error::shape(
                "set_grad",
                format!("gradient has {} elements, tensor has {}", grad.len(), self.data.len()),
            ));
        }
        self.grad = Some(grad);
        Ok(())
    }

    /// Adds `grad` into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, grad: &[E]) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(Error::shape(
                "accumulate_grad",
                format!("gradient has {} elements, tensor has {}", grad.len(), self.data.len()),
            ));
        }
        match &mut self.grad {
            Some(buf) => buf.iter_mut().zip(grad).for_each(|(b, &g)| *b = *b + g),
            None => self.grad = Some(grad.to_vec()),
        }
        Ok(())
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn reshape(self, shape: Shape) -> Result<Self> {
        if shape.numel() != self.shape.numel() || !shape.is_valid() {
            return Err(Error::shape("reshape", format!("cannot view {} as {shape}", self.shape)));
        }
        Ok(Tensor { shape, data: self.data, grad: None })
    }

    pub fn cast<F: Element>(&self) -> Tensor<F> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| F::of_f64(v.as_f64())).collect(),
            grad: self.grad.as_ref().map(|g| g.iter().map(|v| F::of_f64(v.as_f64())).collect()),
        }
    }

    /// Batch item `i` as a standalone tensor with n = 1.
    pub fn batch_item(&self, i: usize) -> Tensor<E> {
        let len = self.shape.item();
        Tensor {
            shape: Shape { n: 1, ..self.shape },
            data: self.data[i * len..(i + 1) * len].to_vec(),
            grad: None,
        }
    }

    /// Stacks n = 1 tensors of identical shape along the batch axis.
    pub fn stack(items: &[Tensor<E>]) -> Result<Tensor<E>> {
        let first = items.first().ok_or_else(|| Error::shape("stack", "no tensors to stack"))?;
        let shape = first.shape;
        let mut data = Vec::with_capacity(shape.numel() * items.len());
        for t in items {
            if t.shape != shape {
                return Err(Error::shape("stack", format!("{} vs {}", t.shape, shape)));
            }
            data.extend_from_slice(&t.data);
        }
        Tensor::new(Shape { n: items.len() * shape.n, ..shape }, data)
    }

    pub fn sum(&self) -> E {
        self.data.iter().copied().sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor<E>) -> E {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a - *b).abs())
            .fold(E::zero(), E::max)
    }
}

/// Weights and geometry of one convolution.
///
/// For an ordinary convolution the weight is laid out (out, in, kh, kw); a
/// transposed convolution stores (in, out, kh, kw) so the same buffer read as
/// a matrix serves both a convolution and its adjoint.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<E = f32> {
    pub weight: Tensor<E>,
    pub bias: Tensor<E>,
    pub stride: usize,
    pub padding: usize,
}

impl<E: Element> ConvParams<E> {
    /// Zero-initialised parameters for an ordinary convolution.
    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        ConvParams {
            weight: Tensor::zeros(Shape::new(out_channels, in_channels, kernel, kernel)),
            bias: Tensor::zeros(Shape::new(1, out_channels, 1, 1)),
            stride,
            padding,
        }
    }

    /// Zero-initialised parameters for a transposed convolution.
    pub fn zeros_transposed(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        ConvParams {
            weight: Tensor::zeros(Shape::new(in_channels, out_channels, kernel, kernel)),
            bias: Tensor::zeros(Shape::new(1, out_channels, 1, 1)),
            stride,
            padding,
        }
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.weight.shape().h, self.weight.shape().w)
    }

    pub fn numel(&self) -> usize {
        self.weight.numel() + self.bias.numel()
    }

    pub fn cast<F: Element>(&self) -> ConvParams<F> {
        ConvParams {
            weight: self.weight.cast(),
            bias: self.bias.cast(),
            stride: self.stride,
            padding: self.padding,
        }
    }
}

/// Output extent of a convolution along one axis.
pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::shape("conv2d", "stride must be positive"));
    }
    let padded = input + 2 * padding;
    if padded < kernel {
        return Err(Error::shape(
            "conv2d",
            format!("kernel {kernel} exceeds padded extent {padded}, output would be empty"),
        ));
    }
    if (padded - kernel) % stride != 0 {
        return Err(Error::shape(
            "conv2d",
            format!("padded extent {padded} minus kernel {kernel} is not divisible by stride {stride}"),
        ));
    }
    Ok((padded - kernel) / stride + 1)
}

/// Output extent of a transposed convolution along one axis.
pub fn conv_transpose_out_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::shape("conv2d_transpose", "stride must be positive"));
    }
    let full = (input - 1) * stride + kernel;
    if full <= 2 * padding {
        return Err(Error::shape(
            "conv2d_transpose",
            format!("padding {padding} leaves no output from extent {full}"),
        ));
    }
    Ok(full - 2 * padding)
}
