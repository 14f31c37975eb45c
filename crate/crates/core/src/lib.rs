//! Image reconstruction from one-bit and two-bit noisy sign samples of the
//! 2D DFT.

pub mod baselines;
pub mod cli;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod metrics;
pub mod noise;
pub mod pgm;
pub mod reconstruct;
pub mod sampling;
pub mod spectrum;
pub mod transform;

pub use error::{Error, Result};
pub use geometry::{build_support_mask, PaddedCanvas, SamplingMode, SpatialImage, SupportMask};
pub use noise::{gaussian_noise_model, NoiseFamily, NoiseModel};
pub use sampling::{read_bits, sample_bits, sample_one_bit, sample_two_bit, write_bits, BitSample};
pub use spectrum::SpectralImage;
pub use transform::{dft2, dft2_complex, idft2, Transformer};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/transforms.md")]
    mod transforms {}
    #[doc = include_str!("../../../book/src/sampling.md")]
    mod sampling {}
    #[doc = include_str!("../../../book/src/reconstruction.md")]
    mod reconstruction {}
    #[doc = include_str!("../../../book/src/baselines.md")]
    mod baselines {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
