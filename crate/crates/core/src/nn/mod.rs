//! A small CPU neural-network engine with explicit backward passes.
//!
//! Layers own their [`Param`]s; `forward` returns the output together with
//! whatever the matching `backward` needs, and `backward` accumulates into the
//! parameter gradients and returns the input gradient.

mod act;
mod conv;
mod gemm;
mod init;
mod norm;
mod optim;
mod param;

pub use act::{leaky_relu, leaky_relu_backward, relu, relu_backward, tanh, tanh_backward};
pub use conv::{Conv2d, ConvTranspose2d};
pub use init::{Init, ParamRng};
pub use norm::{BatchNorm2d, NormCache};
pub use optim::{Adam, AdamConfig};
pub use param::Param;

/// Output spatial size of a strided convolution.
pub fn conv_out_size(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad).saturating_sub(kernel) / stride + 1
}
