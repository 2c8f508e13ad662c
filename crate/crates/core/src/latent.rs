//! Deterministic latent simulator.
//!
//! Video of shape (f, h, w, c) maps to latents of shape
//! ((f - 1) / 4 + 1, h / 8, w / 8, 16): the first frame is pooled alone,
//! each later group of four frames together, every 8x8 spatial block
//! averaged, and the pooled colour lifted into 16 channels by a fixed
//! matrix with orthonormal rows.

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{Dims, LatentTensor, VideoTensor, LATENT_CHANNELS};

pub const SPATIAL_FACTOR: usize = 8;
pub const TEMPORAL_GROUP: usize = 4;

/// Latent shape for a video shape, or a shape error.
pub fn latent_dims(video: Dims) -> Result<Dims> {
    if video.frames == 0 || (video.frames - 1) % TEMPORAL_GROUP != 0 {
        return Err(Error::Dimension {
            dims: video.as_vec(),
            reason: "frame count must be 1 mod 4".into(),
        });
    }
    if video.height % SPATIAL_FACTOR != 0 || video.width % SPATIAL_FACTOR != 0 || video.height == 0 || video.width == 0 {
        return Err(Error::Dimension {
            dims: video.as_vec(),
            reason: "height and width must be positive multiples of 8".into(),
        });
    }
    Ok(Dims::new(
        (video.frames - 1) / TEMPORAL_GROUP + 1,
        video.height / SPATIAL_FACTOR,
        video.width / SPATIAL_FACTOR,
        LATENT_CHANNELS,
    ))
}

/// Inverse of [`latent_dims`] for `channels` output channels.
pub fn video_dims(latent: Dims, channels: usize) -> Dims {
    Dims::new(
        (latent.frames - 1) * TEMPORAL_GROUP + 1,
        latent.height * SPATIAL_FACTOR,
        latent.width * SPATIAL_FACTOR,
        channels,
    )
}

/// Video frames pooled into latent frame `lf`.
fn frame_group(lf: usize) -> std::ops::Range<usize> {
    if lf == 0 {
        0..1
    } else {
        (lf - 1) * TEMPORAL_GROUP + 1..lf * TEMPORAL_GROUP + 1
    }
}

/// Spatio-temporal average pooling with strides 1x8x8 for the first frame
/// and 4x8x8 afterwards, over channels `0..keep`. Output is (f', h', w', keep).
fn pool(video: &VideoTensor, keep: usize) -> Result<(Dims, Vec<f64>)> {
    let vd = video.dims();
    let ld = latent_dims(vd)?;
    let mut out = vec![0.0f64; ld.frames * ld.height * ld.width * keep];
    for lf in 0..ld.frames {
        let group = frame_group(lf);
        let norm = 1.0 / (group.len() * SPATIAL_FACTOR * SPATIAL_FACTOR) as f64;
        for f in group {
            for r in 0..vd.height {
                let lr = r / SPATIAL_FACTOR;
                for c in 0..vd.width {
                    let lc = c / SPATIAL_FACTOR;
                    let base = ((lf * ld.height + lr) * ld.width + lc) * keep;
                    for ch in 0..keep {
                        out[base + ch] += video.get(f, r, c, ch) as f64;
                    }
                }
            }
        }
        let n = ld.height * ld.width * keep;
        out[lf * n..(lf + 1) * n].iter_mut().for_each(|v| *v *= norm);
    }
    Ok((ld, out))
}

/// Fixed linear stand-in for a video autoencoder.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCodec {
    channels: usize,
    seed: u64,
    /// `channels` rows of length 16, orthonormal.
    lift: Vec<f64>,
}

impl LatentCodec {
    /// Draws the lift matrix from `rng` (conventionally the "codec" substream).
    pub fn new(channels: usize, rng: &mut SeededRng) -> Result<Self> {
        if !matches!(channels, 1 | 3) {
            return Err(Error::Validation(format!("codec channels must be 1 or 3, got {channels}")));
        }
        let seed = rng.seed();
        let k = LATENT_CHANNELS;
        let mut lift: Vec<f64> = (0..channels * k).map(|_| StandardNormal.sample(rng)).collect();
        // Gram-Schmidt on the rows, twice for numerical safety.
        for _ in 0..2 {
            for i in 0..channels {
                for j in 0..i {
                    let dot: f64 = (0..k).map(|t| lift[i * k + t] * lift[j * k + t]).sum();
                    for t in 0..k {
                        lift[i * k + t] -= dot * lift[j * k + t];
                    }
                }
                let norm = (0..k).map(|t| lift[i * k + t].powi(2)).sum::<f64>().sqrt();
                for t in 0..k {
                    lift[i * k + t] /= norm;
                }
            }
        }
        Ok(Self { channels, seed, lift })
    }

    pub fn from_seed(channels: usize, master_seed: u64) -> Result<Self> {
        Self::new(channels, &mut SeededRng::new(master_seed).substream("codec"))
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn lift(&self) -> &[f64] {
        &self.lift
    }

    pub fn encode_video(&self, video: &VideoTensor) -> Result<LatentTensor> {
        if video.dims().channels != self.channels {
            return Err(Error::shape(
                &video.dims().with_channels(self.channels).as_vec(),
                &video.dims().as_vec(),
            ));
        }
        let (ld, pooled) = pool(video, self.channels)?;
        let k = LATENT_CHANNELS;
        let mut data = Vec::with_capacity(ld.len());
        for px in pooled.chunks_exact(self.channels) {
            for t in 0..k {
                let v: f64 = px.iter().enumerate().map(|(i, &p)| p * self.lift[i * k + t]).sum();
                data.push(v as f32);
            }
        }
        LatentTensor::new(ld, data)
    }

    /// Transpose lift, then nearest-neighbour upsampling in space and time.
    /// Values are clamped into [0, 1].
    pub fn decode_latent(&self, latent: &LatentTensor) -> Result<VideoTensor> {
        let ld = latent.dims();
        let vd = video_dims(ld, self.channels);
        let k = LATENT_CHANNELS;
        let colours: Vec<f64> = latent
            .data()
            .chunks_exact(k)
            .flat_map(|z| {
                (0..self.channels).map(move |i| (0..k).map(|t| z[t] as f64 * self.lift[i * k + t]).sum::<f64>())
            })
            .collect();
        let mut data = vec![0.0f32; vd.len()];
        for lf in 0..ld.frames {
            for f in frame_group(lf) {
                for r in 0..vd.height {
                    for c in 0..vd.width {
                        let src = ((lf * ld.height + r / SPATIAL_FACTOR) * ld.width + c / SPATIAL_FACTOR) * self.channels;
                        let dst = vd.index(f, r, c, 0);
                        for ch in 0..self.channels {
                            data[dst + ch] = (colours[src + ch] as f32).clamp(0.0, 1.0);
                        }
                    }
                }
            }
        }
        VideoTensor::new_clamped(vd, data)
    }
}

/// Pools channel 0 of a point map to latent resolution and repeats it over
/// all 16 latent channels.
pub fn pool_pointmap(point_map: &VideoTensor) -> Result<LatentTensor> {
    let (ld1, pooled) = pool(point_map, 1)?;
    let ld = ld1.with_channels(LATENT_CHANNELS);
    let data = pooled
        .iter()
        .flat_map(|&v| std::iter::repeat_n(v as f32, LATENT_CHANNELS))
        .collect();
    LatentTensor::new(ld, data)
}

/// Per-element loss weights `|pooled - 0.5|`, in [0, 0.5].
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMap(LatentTensor);

impl WeightMap {
    pub fn as_latent(&self) -> &LatentTensor {
        &self.0
    }

    pub fn data(&self) -> &[f32] {
        self.0.data()
    }

    pub fn dims(&self) -> Dims {
        self.0.dims()
    }

    /// Constant weights, mostly for tests.
    pub fn uniform(dims: Dims, value: f32) -> Result<Self> {
        if !(0.0..=0.5).contains(&value) {
            return Err(Error::Validation(format!("weight {value} outside [0, 0.5]")));
        }
        LatentTensor::filled(dims, value).map(WeightMap)
    }
}

pub fn weight_map(pooled: &LatentTensor) -> Result<WeightMap> {
    if let Some(v) = pooled.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Validation(format!("pooled point map value {v} outside [0, 1]")));
    }
    let data = pooled.data().iter().map(|&v| (v - 0.5).abs()).collect();
    LatentTensor::new(pooled.dims(), data).map(WeightMap)
}
