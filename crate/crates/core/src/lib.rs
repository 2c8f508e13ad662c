//! Point-prompted video object insertion on a desk-scale toy stack:
//! binary tensor I/O, point-map rasterisation and sampling, a fixed latent
//! codec, flow-matching losses, a small trainable denoiser, synthetic data
//! and an evaluation harness.

pub mod datasynth;
pub mod denoiser;
pub mod error;
pub mod format;
pub mod latent;
pub mod losses;
pub mod metrics;
pub mod pointmap;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use latent::{LatentCodec, WeightMap};
pub use pointmap::{BinaryMask, DensityMode, PointAnnotation, Polarity, Prompt, SamplingPolicy};
pub use rng::SeededRng;
pub use tensor::{Dims, LatentTensor, Tensor, VideoTensor, LATENT_CHANNELS};
