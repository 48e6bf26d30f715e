//! Bi-dense super-resolution networks on a small CPU autodiff engine.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`], [`ops`], [`autograd`]: 4-D tensors, convolution /
//!   transposed convolution / pixel shuffle kernels and a reverse-mode tape.
//! * [`model`], [`checkpoint`]: the network, its ablations, parameter
//!   accounting and the binary checkpoint format.
//! * [`data`]: image I/O, bicubic degradation, dataset preparation, patch
//!   sampling and augmentation.
//! * [`train`]: Adam, the step learning-rate schedule and the training loop.
//! * [`metrics`]: Y-channel PSNR / SSIM and dataset evaluation.
//! * [`gradcheck`]: finite-difference verification of every op.

pub mod autograd;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod tensor;
pub mod train;

pub use autograd::{Gradients, Tape, Var};
pub use error::{Error, Result};
pub use model::{ModelConfig, Network, Variant};
pub use tensor::{ConvParams, Element, Shape, Tensor};
