use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pointmap::BinaryMask;
use crate::tensor::VideoTensor;

pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_RADIUS: usize = 5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

/// Serialises infinite values as the string `"inf"`.
pub mod psnr_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("bad PSNR value {t:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionMetrics {
    pub mse: f64,
    pub mae: f64,
    /// dB against peak 1.0; infinite when the region matches exactly.
    #[serde(with = "psnr_serde")]
    pub psnr: f64,
    pub ssim: f64,
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

fn gaussian_taps() -> Vec<f64> {
    let r = SSIM_RADIUS as isize;
    (-r..=r)
        .map(|d| (-((d * d) as f64) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect()
}

/// Separable Gaussian average with the window truncated at the border and
/// renormalised by the weight that remains.
fn blur(img: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let r = SSIM_RADIUS as isize;
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let (mut acc, mut norm) = (0.0, 0.0);
                for (k, &t) in taps.iter().enumerate() {
                    let d = k as isize - r;
                    let (yy, xx) = if horizontal { (y as isize, x as isize + d) } else { (y as isize + d, x as isize) };
                    if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                        continue;
                    }
                    acc += t * src[yy as usize * w + xx as usize];
                    norm += t;
                }
                out[y * w + x] = acc / norm;
            }
        }
        out
    };
    pass(&pass(img, true), false)
}

/// Per-pixel SSIM map of one frame channel.
fn ssim_map(a: &[f64], b: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let (c1, c2) = (K1 * K1, K2 * K2);
    let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mu_a = blur(a, h, w, taps);
    let mu_b = blur(b, h, w, taps);
    let aa = blur(&prod(a, a), h, w, taps);
    let bb = blur(&prod(b, b), h, w, taps);
    let ab = blur(&prod(a, b), h, w, taps);
    (0..h * w)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .collect()
}

/// MSE, MAE, PSNR and SSIM restricted to `region`. SSIM uses an 11x11
/// Gaussian window (sigma 1.5) and is averaged over windows centred in the
/// region, per channel.
pub fn region_metrics(a: &VideoTensor, b: &VideoTensor, region: &BinaryMask) -> Result<RegionMetrics> {
    let d = a.dims();
    if b.dims() != d {
        return Err(Error::shape(&d.as_vec(), &b.dims().as_vec()));
    }
    if (region.frames, region.height, region.width) != (d.frames, d.height, d.width) {
        return Err(Error::shape(
            &[d.frames, d.height, d.width],
            &[region.frames, region.height, region.width],
        ));
    }
    if region.is_empty() {
        return Err(Error::Validation("metric region is empty".into()));
    }
    let ch = d.channels;
    let (mut se, mut ae, mut n) = (0.0, 0.0, 0usize);
    for (p, &inside) in region.data().iter().enumerate() {
        if !inside {
            continue;
        }
        for k in 0..ch {
            let diff = a.data()[p * ch + k] as f64 - b.data()[p * ch + k] as f64;
            se += diff * diff;
            ae += diff.abs();
            n += 1;
        }
    }
    let mse = se / n as f64;
    let mae = ae / n as f64;

    let taps = gaussian_taps();
    let (h, w) = (d.height, d.width);
    let (mut ssim_sum, mut ssim_n) = (0.0, 0usize);
    for f in 0..d.frames {
        let rf = region.frame(f);
        if !rf.iter().any(|&v| v) {
            continue;
        }
        for k in 0..ch {
            let plane = |v: &VideoTensor| -> Vec<f64> { v.frame(f).iter().skip(k).step_by(ch).map(|&x| x as f64).collect() };
            let map = ssim_map(&plane(a), &plane(b), h, w, &taps);
            for (i, &inside) in rf.iter().enumerate() {
                if inside {
                    ssim_sum += map[i];
                    ssim_n += 1;
                }
            }
        }
    }
    Ok(RegionMetrics {
        mse,
        mae,
        psnr: psnr_from_mse(mse),
        ssim: (ssim_sum / ssim_n as f64).clamp(0.0, 1.0),
    })
}
