use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::VideoTensor;

pub const BLOCK: usize = 8;
pub const SEARCH: isize = 4;

/// Per-pixel displacement (rows, cols) from frame k to frame k+1: the pixel
/// at `p` in frame k+1 came from `p - flow(p)` in frame k.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowField {
    pub height: usize,
    pub width: usize,
    pub dy: Vec<f32>,
    pub dx: Vec<f32>,
}

impl FlowField {
    pub fn uniform(height: usize, width: usize, dy: f32, dx: f32) -> Self {
        Self {
            height,
            width,
            dy: vec![dy; height * width],
            dx: vec![dx; height * width],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Flows {
    Fields(Vec<FlowField>),
    /// Exhaustive 8x8 block matching within +-4 pixels.
    Estimate,
}

fn bilinear(plane: &[f32], h: usize, w: usize, ch: usize, k: usize, y: f64, x: f64) -> f64 {
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = (y - y0, x - x0);
    let (y0, x0) = (y0 as usize, x0 as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let at = |r: usize, c: usize| plane[(r * w + c) * ch + k] as f64;
    (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x1)) + fy * ((1.0 - fx) * at(y1, x0) + fx * at(y1, x1))
}

/// Block-matching flow between consecutive frames, minimising the mean
/// absolute difference over the overlapping pixels; ties keep the smallest
/// displacement.
pub fn estimate_flow(prev: &[f32], next: &[f32], h: usize, w: usize, ch: usize) -> FlowField {
    let mut flow = FlowField::uniform(h, w, 0.0, 0.0);
    let mut candidates: Vec<(isize, isize)> = (-SEARCH..=SEARCH).flat_map(|dy| (-SEARCH..=SEARCH).map(move |dx| (dy, dx))).collect();
    candidates.sort_by_key(|&(dy, dx)| (dy.abs().max(dx.abs()), dy.abs() + dx.abs()));
    for by in (0..h).step_by(BLOCK) {
        for bx in (0..w).step_by(BLOCK) {
            let (ey, ex) = ((by + BLOCK).min(h), (bx + BLOCK).min(w));
            let mut best = (f64::INFINITY, 0isize, 0isize);
            for &(dy, dx) in &candidates {
                let (mut sad, mut n) = (0.0, 0usize);
                for r in by..ey {
                    for c in bx..ex {
                        let (sr, sc) = (r as isize - dy, c as isize - dx);
                        if sr < 0 || sc < 0 || sr >= h as isize || sc >= w as isize {
                            continue;
                        }
                        let q = (sr as usize * w + sc as usize) * ch;
                        let p = (r * w + c) * ch;
                        for k in 0..ch {
                            sad += (next[p + k] - prev[q + k]).abs() as f64;
                        }
                        n += 1;
                    }
                }
                // Candidates must keep at least half the block in frame.
                if 2 * n < (ey - by) * (ex - bx) {
                    continue;
                }
                let sad = sad / n as f64;
                if sad < best.0 {
                    best = (sad, dy, dx);
                }
            }
            for r in by..ey {
                for c in bx..ex {
                    flow.dy[r * w + c] = best.1 as f32;
                    flow.dx[r * w + c] = best.2 as f32;
                }
            }
        }
    }
    flow
}

/// Mean over transitions of the mean absolute difference between frame
/// k+1 and frame k warped by the flow, over pixels whose source position
/// lies inside the frame; scaled by 100.
pub fn ewarp(video: &VideoTensor, flows: &Flows) -> Result<f64> {
    let d = video.dims();
    let (h, w, ch) = (d.height, d.width, d.channels);
    if d.frames < 2 {
        return Ok(0.0);
    }
    let fields: Vec<FlowField> = match flows {
        Flows::Fields(f) => {
            if f.len() != d.frames - 1 {
                return Err(Error::Validation(format!(
                    "expected {} flow fields, got {}",
                    d.frames - 1,
                    f.len()
                )));
            }
            if let Some(bad) = f.iter().find(|x| x.height != h || x.width != w || x.dy.len() != h * w || x.dx.len() != h * w) {
                return Err(Error::shape(&[h, w], &[bad.height, bad.width]));
            }
            f.clone()
        }
        Flows::Estimate => (0..d.frames - 1)
            .map(|k| estimate_flow(video.frame(k), video.frame(k + 1), h, w, ch))
            .collect(),
    };
    let (mut total, mut used) = (0.0, 0usize);
    for (k, flow) in fields.iter().enumerate() {
        let (prev, next) = (video.frame(k), video.frame(k + 1));
        let (mut sum, mut n) = (0.0, 0usize);
        for r in 0..h {
            for c in 0..w {
                let i = r * w + c;
                let y = r as f64 - flow.dy[i] as f64;
                let x = c as f64 - flow.dx[i] as f64;
                if y < 0.0 || x < 0.0 || y > (h - 1) as f64 || x > (w - 1) as f64 {
                    continue;
                }
                for kk in 0..ch {
                    sum += (next[i * ch + kk] as f64 - bilinear(prev, h, w, ch, kk, y, x)).abs();
                }
                n += ch;
            }
        }
        if n > 0 {
            total += sum / n as f64;
            used += 1;
        }
    }
    Ok(if used == 0 { 0.0 } else { 100.0 * total / used as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use crate::tensor::Dims;
    use rand::Rng;

    fn shifted(frames: usize, h: usize, w: usize) -> VideoTensor {
        let mut rng = SeededRng::new(3);
        let wide: Vec<f32> = (0..h * (w + frames)).map(|_| rng.random()).collect();
        let d = Dims::new(frames, h, w, 1);
        // Content moves one pixel right per frame.
        let data = (0..d.len())
            .map(|i| {
                let (f, r, c) = (i / (h * w), (i / w) % h, i % w);
                wide[r * (w + frames) + (c + frames - f)]
            })
            .collect();
        VideoTensor::new(d, data).unwrap()
    }

    #[test]
    fn static_video_is_zero() {
        let v = VideoTensor::filled(Dims::new(4, 16, 16, 3), 0.4).unwrap();
        let zero = Flows::Fields(vec![FlowField::uniform(16, 16, 0.0, 0.0); 3]);
        assert_eq!(ewarp(&v, &zero).unwrap(), 0.0);
        assert_eq!(ewarp(&v, &Flows::Estimate).unwrap(), 0.0);
    }

    #[test]
    fn true_flow_cancels_shift() {
        let v = shifted(4, 16, 16);
        let flow = Flows::Fields(vec![FlowField::uniform(16, 16, 0.0, 1.0); 3]);
        assert!(ewarp(&v, &flow).unwrap() < 1e-9);
        assert!(ewarp(&v, &Flows::Estimate).unwrap() < 1e-9);
    }

    #[test]
    fn zero_flow_on_shift_is_adjacent_difference() {
        let v = shifted(3, 12, 12);
        let zero = Flows::Fields(vec![FlowField::uniform(12, 12, 0.0, 0.0); 2]);
        let mut total = 0.0;
        for k in 0..2 {
            let mut s = 0.0;
            for r in 0..12 {
                for c in 0..12 {
                    s += (v.get(k + 1, r, c, 0) as f64 - v.get(k, r, c, 0) as f64).abs();
                }
            }
            total += s / 144.0;
        }
        let want = 100.0 * total / 2.0;
        assert!((ewarp(&v, &zero).unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn flow_count_is_checked() {
        let v = shifted(3, 12, 12);
        assert!(ewarp(&v, &Flows::Fields(vec![FlowField::uniform(12, 12, 0.0, 0.0)])).is_err());
        assert!(ewarp(&v, &Flows::Fields(vec![FlowField::uniform(12, 10, 0.0, 0.0); 2])).is_err());
    }
}
