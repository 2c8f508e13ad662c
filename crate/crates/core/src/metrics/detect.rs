use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pointmap::{BinaryMask, PointAnnotation};
use crate::tensor::VideoTensor;

pub const DEFAULT_THRESHOLD: f32 = 0.08;
pub const DEFAULT_MIN_BLOB: usize = 4;

/// Pixels whose largest per-channel change exceeds `threshold`, with
/// 8-connected components smaller than `min_blob` pixels removed.
pub fn detect_inserted_region(output: &VideoTensor, source: &VideoTensor, threshold: f32, min_blob: usize) -> Result<BinaryMask> {
    let d = source.dims();
    if output.dims() != d {
        return Err(Error::shape(&d.as_vec(), &output.dims().as_vec()));
    }
    let (h, w, ch) = (d.height, d.width, d.channels);
    let mut mask = BinaryMask::from_fn(d.frames, h, w, |f, r, c| {
        let i = d.index(f, r, c, 0);
        (0..ch).any(|k| (output.data()[i + k] - source.data()[i + k]).abs() > threshold)
    });
    if min_blob <= 1 {
        return Ok(mask);
    }
    let mut seen = vec![false; h * w];
    let mut stack = Vec::new();
    let mut blob = Vec::new();
    for f in 0..d.frames {
        seen.fill(false);
        for start in 0..h * w {
            if seen[start] || !mask.get(f, start / w, start % w) {
                continue;
            }
            blob.clear();
            stack.push(start);
            seen[start] = true;
            while let Some(p) = stack.pop() {
                blob.push(p);
                let (r, c) = ((p / w) as isize, (p % w) as isize);
                for dr in -1..=1 {
                    for dc in -1..=1 {
                        let (rr, cc) = (r + dr, c + dc);
                        if rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                            continue;
                        }
                        let q = rr as usize * w + cc as usize;
                        if !seen[q] && mask.get(f, rr as usize, cc as usize) {
                            seen[q] = true;
                            stack.push(q);
                        }
                    }
                }
            }
            if blob.len() < min_blob {
                for &p in &blob {
                    mask.set(f, p / w, p % w, false);
                }
            }
        }
    }
    Ok(mask)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointAccuracy {
    pub acc_pos: f64,
    /// `None` when there are no negative points.
    pub acc_neg: Option<f64>,
}

/// Hit rates of click centres: positives inside the mask, negatives outside.
pub fn point_accuracy(annotations: &[PointAnnotation], predicted: &BinaryMask) -> Result<PointAccuracy> {
    let (mut pos, mut pos_hit, mut neg, mut neg_hit) = (0usize, 0usize, 0usize, 0usize);
    for a in annotations {
        if a.frame >= predicted.frames || a.row >= predicted.height || a.col >= predicted.width {
            return Err(Error::Validation(format!(
                "annotation at ({}, {}, {}) lies outside the mask",
                a.frame, a.row, a.col
            )));
        }
        let inside = predicted.get(a.frame, a.row, a.col);
        if a.is_positive() {
            pos += 1;
            pos_hit += inside as usize;
        } else {
            neg += 1;
            neg_hit += !inside as usize;
        }
    }
    let acc_neg = (neg > 0).then(|| neg_hit as f64 / neg as f64);
    if pos == 0 {
        return Err(Error::NoPositivePoints { acc_neg });
    }
    Ok(PointAccuracy {
        acc_pos: pos_hit as f64 / pos as f64,
        acc_neg,
    })
}
