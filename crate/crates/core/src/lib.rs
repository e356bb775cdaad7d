//! Auditing demographic bias in face-frontalization GANs.
//!
//! The crate trains Pix2Pix and Pairwise-GAN generators on attribute-ratio
//! controlled splits, probes them with in-distribution, noise and gray-ramp
//! images, and localizes bias through per-layer activation variance and a
//! cross-checkpoint filter PCA.

pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod exec;
pub mod instrumentation;
pub mod models;
pub mod nn;
pub mod plot;
pub mod runner;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::Tensor;

/// Derives an independent stream seed from a base seed (splitmix64 finalizer).
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
