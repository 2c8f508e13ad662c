use crate::error::{Error, Result};
use crate::pointmap::BinaryMask;
use crate::rng::SeededRng;
use crate::tensor::{Dims, VideoTensor};

use rand_distr::{Distribution, Uniform};

fn check_mask(video: Dims, mask: &BinaryMask) -> Result<()> {
    if (mask.frames, mask.height, mask.width) != (video.frames, video.height, video.width) {
        return Err(Error::shape(
            &[video.frames, video.height, video.width],
            &[mask.frames, mask.height, mask.width],
        ));
    }
    Ok(())
}

/// `x * (1 - m)`, with the mask broadcast over channels.
pub fn masked_video(x: &VideoTensor, m: &BinaryMask) -> Result<VideoTensor> {
    let d = x.dims();
    check_mask(d, m)?;
    let data = x
        .data()
        .chunks_exact(d.channels)
        .zip(m.data())
        .flat_map(|(px, &inside)| px.iter().map(move |&v| if inside { 0.0 } else { v }))
        .collect();
    VideoTensor::new(d, data)
}

pub const INPAINT_TOLERANCE: f64 = 1e-4;
pub const DEFAULT_INPAINT_ITERATIONS: usize = 2000;

/// Diffusion fill: masked pixels are repeatedly replaced by the mean of
/// their in-frame 4-neighbours (Jacobi sweeps) until the largest update is
/// below the tolerance or `iterations` sweeps have run. Masked pixels
/// start at the mean of the boundary ring, which keeps every iterate
/// inside the boundary's value envelope.
pub fn traditional_inpaint(x: &VideoTensor, m: &BinaryMask, iterations: usize) -> Result<VideoTensor> {
    let d = x.dims();
    check_mask(d, m)?;
    let (h, w, ch) = (d.height, d.width, d.channels);
    let n = h * w;
    let mut out = x.data().to_vec();
    for f in 0..d.frames {
        let fm = m.frame(f);
        let holes: Vec<usize> = (0..n).filter(|&i| fm[i]).collect();
        if holes.is_empty() {
            continue;
        }
        if holes.len() == n {
            return Err(Error::Inpaint(format!("frame {f} is fully masked")));
        }
        let neighbours = |i: usize| {
            let (r, c) = (i / w, i % w);
            let mut v = Vec::with_capacity(4);
            if r > 0 {
                v.push(i - w);
            }
            if r + 1 < h {
                v.push(i + w);
            }
            if c > 0 {
                v.push(i - 1);
            }
            if c + 1 < w {
                v.push(i + 1);
            }
            v
        };
        let adjacency: Vec<Vec<usize>> = holes.iter().map(|&i| neighbours(i)).collect();
        let mut boundary: Vec<usize> = adjacency.iter().flatten().copied().filter(|&j| !fm[j]).collect();
        boundary.sort_unstable();
        boundary.dedup();

        let base = f * n * ch;
        for c in 0..ch {
            let get = |i: usize| out[base + i * ch + c] as f64;
            let mean = boundary.iter().map(|&j| get(j)).sum::<f64>() / boundary.len() as f64;
            let mut cur: Vec<f64> = (0..n).map(get).collect();
            for &i in &holes {
                cur[i] = mean;
            }
            let mut next = cur.clone();
            for _ in 0..iterations {
                let mut delta: f64 = 0.0;
                for (&i, adj) in holes.iter().zip(&adjacency) {
                    let v = adj.iter().map(|&j| cur[j]).sum::<f64>() / adj.len() as f64;
                    delta = delta.max((v - cur[i]).abs());
                    next[i] = v;
                }
                std::mem::swap(&mut cur, &mut next);
                if delta < INPAINT_TOLERANCE {
                    break;
                }
            }
            for &i in &holes {
                out[base + i * ch + c] = cur[i] as f32;
            }
        }
    }
    VideoTensor::new(d, out)
}

/// `alpha * generated + (1 - alpha) * source`. Alpha may carry one channel
/// or as many as the videos. Alpha 0 and 1 select their operand exactly.
pub fn composite_background(generated: &VideoTensor, source: &VideoTensor, alpha: &VideoTensor) -> Result<VideoTensor> {
    let d = source.dims();
    if generated.dims() != d {
        return Err(Error::shape(&d.as_vec(), &generated.dims().as_vec()));
    }
    let a = alpha.dims();
    if (a.frames, a.height, a.width) != (d.frames, d.height, d.width) || !(a.channels == 1 || a.channels == d.channels) {
        return Err(Error::shape(&d.with_channels(1).as_vec(), &a.as_vec()));
    }
    let per_channel = a.channels == d.channels;
    let data = (0..d.len())
        .map(|i| {
            let al = if per_channel { alpha.data()[i] } else { alpha.data()[i / d.channels] };
            let (g, s) = (generated.data()[i], source.data()[i]);
            if al == 0.0 {
                s
            } else if al == 1.0 {
                g
            } else {
                (al as f64 * g as f64 + (1.0 - al as f64) * s as f64) as f32
            }
        })
        .collect();
    VideoTensor::new(d, data)
}

/// Perturbs pixels inside the mask by uniform noise of the given amplitude,
/// emulating an imperfect remover. Pixels outside the mask are untouched.
pub fn corrupt_inside_mask(x: &VideoTensor, m: &BinaryMask, amplitude: f32, rng: &mut SeededRng) -> Result<VideoTensor> {
    let d = x.dims();
    check_mask(d, m)?;
    if amplitude == 0.0 {
        return Ok(x.clone());
    }
    let noise = Uniform::new_inclusive(-amplitude, amplitude).map_err(|e| Error::Validation(e.to_string()))?;
    let mut data = x.data().to_vec();
    for (px, &inside) in data.chunks_exact_mut(d.channels).zip(m.data()) {
        if inside {
            for v in px {
                *v += noise.sample(rng);
            }
        }
    }
    VideoTensor::new_clamped(d, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_video(d: Dims, rng: &mut SeededRng) -> VideoTensor {
        VideoTensor::new(d, (0..d.len()).map(|_| rng.random::<f32>()).collect()).unwrap()
    }

    #[test]
    fn masked_video_examples() {
        let d = Dims::new(2, 8, 8, 3);
        let mut rng = SeededRng::new(1);
        let x = random_video(d, &mut rng);
        assert_eq!(masked_video(&x, &BinaryMask::empty(2, 8, 8)).unwrap(), x);
        let full = BinaryMask::from_fn(2, 8, 8, |_, _, _| true);
        assert!(masked_video(&x, &full).unwrap().data().iter().all(|&v| v == 0.0));
        let half = BinaryMask::from_fn(2, 8, 8, |_, _, c| c < 4);
        let y = masked_video(&x, &half).unwrap();
        for f in 0..2 {
            for r in 0..8 {
                for c in 0..8 {
                    for ch in 0..3 {
                        let want = if c < 4 { 0.0 } else { x.get(f, r, c, ch) };
                        assert_eq!(y.get(f, r, c, ch), want);
                    }
                }
            }
        }
        assert!(masked_video(&x, &BinaryMask::empty(1, 8, 8)).is_err());
    }

    #[test]
    fn constant_boundary_fills_constant() {
        let d = Dims::new(1, 16, 16, 1);
        let x = VideoTensor::filled(d, 0.3).unwrap();
        let m = BinaryMask::from_fn(1, 16, 16, |_, r, c| (4..12).contains(&r) && (3..10).contains(&c));
        let y = traditional_inpaint(&x, &m, 2000).unwrap();
        assert!(y.data().iter().all(|&v| (v - 0.3).abs() < 1e-6));
    }

    #[test]
    fn linear_boundary_is_reproduced() {
        // A harmonic ramp is the fixed point of the fill.
        let d = Dims::new(1, 16, 16, 1);
        let data = (0..256).map(|i| (i % 16) as f32 / 15.0).collect();
        let x = VideoTensor::new(d, data).unwrap();
        let m = BinaryMask::from_fn(1, 16, 16, |_, r, c| (5..11).contains(&r) && (5..11).contains(&c));
        let y = traditional_inpaint(&masked_video(&x, &m).unwrap(), &m, 4000).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 5e-3, "{a} {b}");
        }
    }

    #[test]
    fn full_frame_mask_errors() {
        let d = Dims::new(2, 8, 8, 3);
        let x = VideoTensor::zeros(d).unwrap();
        let m = BinaryMask::from_fn(2, 8, 8, |f, _, _| f == 1);
        assert!(matches!(traditional_inpaint(&x, &m, 10), Err(Error::Inpaint(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn fill_obeys_boundary_envelope(seed in 0u64..1000, r0 in 0usize..10, c0 in 0usize..10, hh in 1usize..8, ww in 1usize..8) {
            let d = Dims::new(1, 16, 16, 3);
            let mut rng = SeededRng::new(seed);
            let x = random_video(d, &mut rng);
            let m = BinaryMask::from_fn(1, 16, 16, |_, r, c| (r0..r0 + hh).contains(&r) && (c0..c0 + ww).contains(&c));
            let y = traditional_inpaint(&x, &m, 500).unwrap();
            for ch in 0..3 {
                let mut lo = f32::INFINITY;
                let mut hi = f32::NEG_INFINITY;
                for r in 0..16usize {
                    for c in 0..16usize {
                        if m.get(0, r, c) { continue; }
                        let near = [(r.wrapping_sub(1), c), (r + 1, c), (r, c.wrapping_sub(1)), (r, c + 1)]
                            .iter()
                            .any(|&(rr, cc)| rr < 16 && cc < 16 && m.get(0, rr, cc));
                        if near {
                            lo = lo.min(x.get(0, r, c, ch));
                            hi = hi.max(x.get(0, r, c, ch));
                        }
                    }
                }
                for r in 0..16 {
                    for c in 0..16 {
                        let v = y.get(0, r, c, ch);
                        if m.get(0, r, c) {
                            prop_assert!(v >= lo && v <= hi);
                        } else {
                            prop_assert_eq!(v, x.get(0, r, c, ch));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn composite_examples() {
        let d = Dims::new(1, 8, 8, 3);
        let mut rng = SeededRng::new(4);
        let g = random_video(d, &mut rng);
        let s = random_video(d, &mut rng);
        let zero = VideoTensor::zeros(d.with_channels(1)).unwrap();
        let one = VideoTensor::filled(d.with_channels(1), 1.0).unwrap();
        let half = VideoTensor::filled(d, 0.5).unwrap();
        assert_eq!(composite_background(&g, &s, &zero).unwrap(), s);
        assert_eq!(composite_background(&g, &s, &one).unwrap(), g);
        let mid = composite_background(&g, &s, &half).unwrap();
        for i in 0..d.len() {
            let want = (g.data()[i] as f64 + s.data()[i] as f64) / 2.0;
            assert!((mid.data()[i] as f64 - want).abs() < 1e-7);
        }
        let bad = VideoTensor::zeros(Dims::new(1, 8, 16, 1)).unwrap();
        assert!(composite_background(&g, &s, &bad).is_err());
    }

    #[test]
    fn corruption_stays_inside_mask() {
        let d = Dims::new(2, 8, 8, 3);
        let mut rng = SeededRng::new(5);
        let x = random_video(d, &mut rng);
        let m = BinaryMask::from_fn(2, 8, 8, |_, r, _| r < 3);
        let y = corrupt_inside_mask(&x, &m, 0.2, &mut rng).unwrap();
        let mut changed = 0;
        for f in 0..2 {
            for r in 0..8 {
                for c in 0..8 {
                    for ch in 0..3 {
                        if !m.get(f, r, c) {
                            assert_eq!(y.get(f, r, c, ch), x.get(f, r, c, ch));
                        } else if y.get(f, r, c, ch) != x.get(f, r, c, ch) {
                            changed += 1;
                        }
                    }
                }
            }
        }
        assert!(changed > 0);
    }
}
