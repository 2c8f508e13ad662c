//! Dense tensors in (frame, row, col, channel) row-major order.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Channel count of every latent tensor.
pub const LATENT_CHANNELS: usize = 16;

/// Untyped N-d tensor; the unit of on-disk storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n = element_count(&dims)?;
        if n != data.len() {
            return Err(Error::Dimension {
                dims,
                reason: format!("payload has {} values, dims require {n}", data.len()),
            });
        }
        Ok(Self { dims, data })
    }
}

fn element_count(dims: &[usize]) -> Result<usize> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Dimension {
            dims: dims.to_vec(),
            reason: "element count overflows".into(),
        })
}

/// (frames, height, width, channels).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Dims {
    pub const fn new(frames: usize, height: usize, width: usize, channels: usize) -> Self {
        Self {
            frames,
            height,
            width,
            channels,
        }
    }

    pub fn len(&self) -> usize {
        self.frames * self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pixels_per_frame(&self) -> usize {
        self.height * self.width
    }

    pub fn as_vec(&self) -> Vec<usize> {
        vec![self.frames, self.height, self.width, self.channels]
    }

    #[inline]
    pub fn index(&self, f: usize, r: usize, c: usize, ch: usize) -> usize {
        ((f * self.height + r) * self.width + c) * self.channels + ch
    }

    pub fn with_channels(self, channels: usize) -> Self {
        Self { channels, ..self }
    }

    fn from_slice(dims: &[usize]) -> Result<Self> {
        match *dims {
            [f, h, w, c] => Ok(Self::new(f, h, w, c)),
            _ => Err(Error::Dimension {
                dims: dims.to_vec(),
                reason: "expected 4 dims".into(),
            }),
        }
    }
}

fn check_finite(data: &[f32]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::Validation(format!("non-finite value at element {i}"))),
        None => Ok(()),
    }
}

/// Pixel-space video with intensities in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct VideoTensor {
    dims: Dims,
    data: Vec<f32>,
}

impl VideoTensor {
    pub fn validate_dims(dims: Dims) -> Result<()> {
        if dims.frames < 1 || dims.height < 8 || dims.width < 8 || !matches!(dims.channels, 1 | 3) {
            return Err(Error::Dimension {
                dims: dims.as_vec(),
                reason: "video needs f >= 1, h >= 8, w >= 8, c in {1, 3}".into(),
            });
        }
        Ok(())
    }

    pub fn zeros(dims: Dims) -> Result<Self> {
        Self::filled(dims, 0.0)
    }

    pub fn filled(dims: Dims, value: f32) -> Result<Self> {
        Self::validate_dims(dims)?;
        Self::new(dims, vec![value; dims.len()])
    }

    /// Rejects non-finite or out-of-range intensities.
    pub fn new(dims: Dims, data: Vec<f32>) -> Result<Self> {
        Self::validate_dims(dims)?;
        if data.len() != dims.len() {
            return Err(Error::Dimension {
                dims: dims.as_vec(),
                reason: format!("payload has {} values", data.len()),
            });
        }
        check_finite(&data)?;
        if let Some(i) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Validation(format!(
                "intensity {} at element {i} outside [0, 1]",
                data[i]
            )));
        }
        Ok(Self { dims, data })
    }

    /// Clamps into [0, 1]; non-finite values are still rejected.
    pub fn new_clamped(dims: Dims, mut data: Vec<f32>) -> Result<Self> {
        check_finite(&data)?;
        data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        Self::new(dims, data)
    }

    pub(crate) fn from_raw_unchecked(dims: Dims, data: Vec<f32>) -> Self {
        debug_assert_eq!(dims.len(), data.len());
        Self { dims, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, f: usize, r: usize, c: usize, ch: usize) -> f32 {
        self.data[self.dims.index(f, r, c, ch)]
    }

    /// Slice of one frame, `h * w * c` values.
    pub fn frame(&self, f: usize) -> &[f32] {
        let n = self.dims.pixels_per_frame() * self.dims.channels;
        &self.data[f * n..(f + 1) * n]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor {
            dims: self.dims.as_vec(),
            data: self.data.clone(),
        }
    }

    pub fn from_tensor(t: Tensor) -> Result<Self> {
        let dims = Dims::from_slice(&t.dims)?;
        Self::new(dims, t.data)
    }
}

/// Latent-space tensor, (f', h', w', 16), unbounded values.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTensor {
    dims: Dims,
    data: Vec<f32>,
}

impl LatentTensor {
    pub fn validate_dims(dims: Dims) -> Result<()> {
        if dims.frames == 0 || dims.height == 0 || dims.width == 0 {
            return Err(Error::Dimension {
                dims: dims.as_vec(),
                reason: "latent dims must be nonzero".into(),
            });
        }
        if dims.channels != LATENT_CHANNELS {
            return Err(Error::Dimension {
                dims: dims.as_vec(),
                reason: format!("latent needs {LATENT_CHANNELS} channels"),
            });
        }
        Ok(())
    }

    pub fn new(dims: Dims, data: Vec<f32>) -> Result<Self> {
        Self::validate_dims(dims)?;
        if data.len() != dims.len() {
            return Err(Error::Dimension {
                dims: dims.as_vec(),
                reason: format!("payload has {} values", data.len()),
            });
        }
        check_finite(&data)?;
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Dims) -> Result<Self> {
        Self::filled(dims, 0.0)
    }

    pub fn filled(dims: Dims, value: f32) -> Result<Self> {
        Self::validate_dims(dims)?;
        Self::new(dims, vec![value; dims.len()])
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, f: usize, r: usize, c: usize, ch: usize) -> f32 {
        self.data[self.dims.index(f, r, c, ch)]
    }

    pub fn ensure_same_shape(&self, other: &LatentTensor) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::shape(&self.dims.as_vec(), &other.dims.as_vec()));
        }
        Ok(())
    }

    /// Elementwise combination of two same-shaped latents.
    pub fn zip_with(&self, other: &LatentTensor, f: impl Fn(f32, f32) -> f32) -> Result<Self> {
        self.ensure_same_shape(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Self::new(self.dims, data)
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor {
            dims: self.dims.as_vec(),
            data: self.data.clone(),
        }
    }

    pub fn from_tensor(t: Tensor) -> Result<Self> {
        let dims = Dims::from_slice(&t.dims)?;
        Self::new(dims, t.data)
    }
}

/// I.i.d. standard-normal latent.
pub fn gaussian_noise(dims: Dims, rng: &mut SeededRng) -> Result<LatentTensor> {
    LatentTensor::validate_dims(dims)?;
    let data = (0..dims.len())
        .map(|_| {
            let v: f64 = StandardNormal.sample(rng);
            v as f32
        })
        .collect();
    LatentTensor::new(dims, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_is_deterministic() {
        let d = Dims::new(1, 1, 1, 16);
        let a = gaussian_noise(d, &mut SeededRng::new(7)).unwrap();
        let b = gaussian_noise(d, &mut SeededRng::new(7)).unwrap();
        let bits = |t: &LatentTensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn noise_moments() {
        // 100_000 samples; bounds are loose multiples of the standard errors.
        let d = Dims::new(6250, 1, 1, 16);
        let t = gaussian_noise(d, &mut SeededRng::new(42)).unwrap();
        let n = t.data().len() as f64;
        assert_eq!(n, 1e5);
        let mean = t.data().iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = t
            .data()
            .iter()
            .map(|&v| (v as f64 - mean).powi(2))
            .sum::<f64>()
            / (n - 1.0);
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn noise_rejects_zero_frames() {
        let err = gaussian_noise(Dims::new(0, 1, 1, 16), &mut SeededRng::new(1)).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn video_invariants() {
        assert!(VideoTensor::zeros(Dims::new(1, 7, 8, 3)).is_err());
        assert!(VideoTensor::zeros(Dims::new(1, 8, 8, 2)).is_err());
        assert!(VideoTensor::new(Dims::new(1, 8, 8, 1), vec![1.5; 64]).is_err());
        assert!(VideoTensor::new(Dims::new(1, 8, 8, 1), vec![f32::NAN; 64]).is_err());
        let v = VideoTensor::new_clamped(Dims::new(1, 8, 8, 1), vec![1.5; 64]).unwrap();
        assert!(v.data().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn index_is_frame_major() {
        let d = Dims::new(2, 8, 8, 3);
        assert_eq!(d.index(0, 0, 0, 1), 1);
        assert_eq!(d.index(0, 0, 1, 0), 3);
        assert_eq!(d.index(0, 1, 0, 0), 24);
        assert_eq!(d.index(1, 0, 0, 0), 192);
    }
}
