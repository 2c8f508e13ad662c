//! Click annotations and the dense signals derived from them.
//!
//! A point map paints each click as a `size x size` square on its frame:
//! positive clicks are 1.0, negative clicks 0.5, untouched pixels 0.0.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{Dims, VideoTensor};

pub const POSITIVE_VALUE: f32 = 1.0;
pub const NEGATIVE_VALUE: f32 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarity {
    #[serde(rename = "pos")]
    Positive,
    #[serde(rename = "neg")]
    Negative,
}

/// One click.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PointAnnotation {
    pub frame: usize,
    pub row: usize,
    pub col: usize,
    pub polarity: Polarity,
    pub size: usize,
}

impl PointAnnotation {
    pub fn positive(frame: usize, row: usize, col: usize, size: usize) -> Self {
        Self {
            frame,
            row,
            col,
            polarity: Polarity::Positive,
            size,
        }
    }

    pub fn negative(frame: usize, row: usize, col: usize, size: usize) -> Self {
        Self {
            frame,
            row,
            col,
            polarity: Polarity::Negative,
            size,
        }
    }

    pub fn is_positive(&self) -> bool {
        self.polarity == Polarity::Positive
    }

    /// Half-open row and column ranges of the painted square, clipped to the frame.
    pub fn square(&self, height: usize, width: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let half = self.size / 2;
        let r0 = self.row.saturating_sub(half);
        let c0 = self.col.saturating_sub(half);
        let r1 = (self.row + self.size - half).min(height);
        let c1 = (self.col + self.size - half).min(width);
        (r0..r1, c0..c1)
    }

    fn validate(&self, index: usize, frames: usize, height: usize, width: usize) -> Result<()> {
        if self.frame >= frames || self.row >= height || self.col >= width || self.size == 0 {
            return Err(Error::Validation(format!(
                "annotation #{index} {self:?} outside video of {frames}x{height}x{width} or has size 0"
            )));
        }
        Ok(())
    }
}

pub fn annotations_to_json(annotations: &[PointAnnotation]) -> Result<String> {
    serde_json::to_string_pretty(annotations).map_err(|e| Error::json("annotations", e))
}

pub fn annotations_from_json(text: &str) -> Result<Vec<PointAnnotation>> {
    serde_json::from_str(text).map_err(|e| Error::json("annotations", e))
}

/// Binary (f, h, w) mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn empty(frames: usize, height: usize, width: usize) -> Self {
        Self {
            frames,
            height,
            width,
            data: vec![false; frames * height * width],
        }
    }

    pub fn from_fn(
        frames: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> bool,
    ) -> Self {
        let mut m = Self::empty(frames, height, width);
        for fr in 0..frames {
            for r in 0..height {
                for c in 0..width {
                    if f(fr, r, c) {
                        m.set(fr, r, c, true);
                    }
                }
            }
        }
        m
    }

    /// Reads channel 0; any value >= 0.5 counts as set. Rejects non-binary input.
    pub fn from_video(video: &VideoTensor) -> Result<Self> {
        let d = video.dims();
        let mut m = Self::empty(d.frames, d.height, d.width);
        for f in 0..d.frames {
            for r in 0..d.height {
                for c in 0..d.width {
                    let v = video.get(f, r, c, 0);
                    if v != 0.0 && v != 1.0 {
                        return Err(Error::Validation(format!(
                            "mask value {v} at ({f},{r},{c}) is not binary"
                        )));
                    }
                    m.set(f, r, c, v == 1.0);
                }
            }
        }
        Ok(m)
    }

    #[inline]
    fn idx(&self, f: usize, r: usize, c: usize) -> usize {
        (f * self.height + r) * self.width + c
    }

    #[inline]
    pub fn get(&self, f: usize, r: usize, c: usize) -> bool {
        self.data[self.idx(f, r, c)]
    }

    #[inline]
    pub fn set(&mut self, f: usize, r: usize, c: usize, v: bool) {
        let i = self.idx(f, r, c);
        self.data[i] = v;
    }

    pub fn frame(&self, f: usize) -> &[bool] {
        let n = self.height * self.width;
        &self.data[f * n..(f + 1) * n]
    }

    pub fn frame_area(&self, f: usize) -> usize {
        self.frame(f).iter().filter(|&&b| b).count()
    }

    pub fn area(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn complement(&self) -> Self {
        Self {
            data: self.data.iter().map(|&b| !b).collect(),
            ..self.clone()
        }
    }

    /// Square-element dilation, one frame at a time.
    pub fn dilate(&self, radius: usize) -> Self {
        let mut out = Self::empty(self.frames, self.height, self.width);
        for f in 0..self.frames {
            let dist = chebyshev_distance(self.frame(f), self.height, self.width);
            for (i, &d) in dist.iter().enumerate() {
                out.data[f * self.height * self.width + i] = d as usize <= radius;
            }
        }
        out
    }

    /// Mask as a 0/1 video with `channels` identical channels.
    pub fn to_video(&self, channels: usize) -> Result<VideoTensor> {
        let dims = Dims::new(self.frames, self.height, self.width, channels);
        let data = self
            .data
            .iter()
            .flat_map(|&b| std::iter::repeat_n(if b { 1.0 } else { 0.0 }, channels))
            .collect();
        VideoTensor::new(dims, data)
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }
}

/// Exact Chebyshev (L-inf) distance from each pixel to the nearest set pixel
/// of one frame; `u32::MAX` when the frame has no set pixel.
pub fn chebyshev_distance(frame: &[bool], height: usize, width: usize) -> Vec<u32> {
    const FAR: u32 = u32::MAX;
    let mut d: Vec<u32> = frame.iter().map(|&b| if b { 0 } else { FAR }).collect();
    let at = |r: usize, c: usize| r * width + c;
    let relax = |cur: u32, n: u32| if n == FAR { cur } else { cur.min(n + 1) };
    for r in 0..height {
        for c in 0..width {
            let mut v = d[at(r, c)];
            if r > 0 {
                v = relax(v, d[at(r - 1, c)]);
                if c > 0 {
                    v = relax(v, d[at(r - 1, c - 1)]);
                }
                if c + 1 < width {
                    v = relax(v, d[at(r - 1, c + 1)]);
                }
            }
            if c > 0 {
                v = relax(v, d[at(r, c - 1)]);
            }
            d[at(r, c)] = v;
        }
    }
    for r in (0..height).rev() {
        for c in (0..width).rev() {
            let mut v = d[at(r, c)];
            if r + 1 < height {
                v = relax(v, d[at(r + 1, c)]);
                if c > 0 {
                    v = relax(v, d[at(r + 1, c - 1)]);
                }
                if c + 1 < width {
                    v = relax(v, d[at(r + 1, c + 1)]);
                }
            }
            if c + 1 < width {
                v = relax(v, d[at(r, c + 1)]);
            }
            d[at(r, c)] = v;
        }
    }
    d
}

/// Paints the point map. Negatives are drawn first so positives win on overlap.
pub fn rasterize_points(annotations: &[PointAnnotation], dims: Dims) -> Result<VideoTensor> {
    VideoTensor::validate_dims(dims)?;
    for (i, a) in annotations.iter().enumerate() {
        a.validate(i, dims.frames, dims.height, dims.width)?;
    }
    let mut data = vec![0.0f32; dims.len()];
    let pass = |data: &mut [f32], polarity: Polarity, value: f32| {
        for a in annotations.iter().filter(|a| a.polarity == polarity) {
            let (rows, cols) = a.square(dims.height, dims.width);
            for r in rows {
                for c in cols.clone() {
                    let base = dims.index(a.frame, r, c, 0);
                    data[base..base + dims.channels].fill(value);
                }
            }
        }
    };
    pass(&mut data, Polarity::Negative, NEGATIVE_VALUE);
    pass(&mut data, Polarity::Positive, POSITIVE_VALUE);
    Ok(VideoTensor::from_raw_unchecked(dims, data))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityMode {
    FirstFrameOnly,
    FixedDensity,
    VariableDensity,
    FullMask,
}

impl std::str::FromStr for DensityMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "first_frame_only" | "first_frame" => Ok(Self::FirstFrameOnly),
            "fixed_density" | "fixed" => Ok(Self::FixedDensity),
            "variable_density" | "variable" => Ok(Self::VariableDensity),
            "full_mask" | "mask" => Ok(Self::FullMask),
            other => Err(Error::Validation(format!("unknown density mode {other:?}"))),
        }
    }
}

/// How many points to place per keyframe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointCount {
    Fixed(usize),
    /// Inclusive range. Drawn once per example in variable-density mode,
    /// otherwise resolves to `max`.
    Range { min: usize, max: usize },
    /// `ceil(fraction * cells)` where `cells` counts the 8x8 cells the
    /// keyframe's mask touches; at least `min`.
    MaskCoverage { fraction: f64, min: usize },
}

impl PointCount {
    fn validate(&self) -> Result<()> {
        match *self {
            PointCount::Range { min, max } if min > max => Err(Error::Validation(format!(
                "point count range {min}..={max} is empty"
            ))),
            PointCount::MaskCoverage { fraction, .. } if !(0.0..=1.0).contains(&fraction) => Err(
                Error::Validation(format!("mask coverage fraction {fraction} outside [0, 1]")),
            ),
            _ => Ok(()),
        }
    }

    fn may_be_positive(&self) -> bool {
        match *self {
            PointCount::Fixed(n) => n > 0,
            PointCount::Range { max, .. } => max > 0,
            PointCount::MaskCoverage { .. } => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativePlacement {
    /// Uniform over background at Chebyshev distance >= point size from the mask.
    #[default]
    Uniform,
    /// Prefer the band between one and two point sizes from the mask.
    BoundaryBiased,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingPolicy {
    pub mode: DensityMode,
    pub keyframe_interval: usize,
    pub positives: PointCount,
    pub negatives: PointCount,
    pub point_size: usize,
    #[serde(default)]
    pub negative_placement: NegativePlacement,
}

impl Default for SamplingPolicy {
    /// Benchmark-style prompting: keyframes every 10 frames, 3 positive and
    /// 2 negative clicks each, 10 px squares.
    fn default() -> Self {
        Self {
            mode: DensityMode::FixedDensity,
            keyframe_interval: 10,
            positives: PointCount::Fixed(3),
            negatives: PointCount::Fixed(2),
            point_size: 10,
            negative_placement: NegativePlacement::Uniform,
        }
    }
}

impl SamplingPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.keyframe_interval == 0 {
            return Err(Error::Validation("keyframe interval must be >= 1".into()));
        }
        if self.point_size == 0 {
            return Err(Error::Validation("point size must be >= 1".into()));
        }
        self.positives.validate()?;
        self.negatives.validate()?;
        if self.mode != DensityMode::FullMask && !self.positives.may_be_positive() {
            return Err(Error::Validation(
                "insertion prompts need at least one positive point".into(),
            ));
        }
        Ok(())
    }

    pub fn keyframes(&self, frames: usize) -> Vec<usize> {
        match self.mode {
            DensityMode::FirstFrameOnly => vec![0],
            _ => (0..frames).step_by(self.keyframe_interval.max(1)).collect(),
        }
    }
}

/// The guidance signal handed to the model.
#[derive(Debug, Clone, PartialEq)]
pub enum Prompt {
    Points(Vec<PointAnnotation>),
    Mask,
}

impl Prompt {
    pub fn annotations(&self) -> &[PointAnnotation] {
        match self {
            Prompt::Points(a) => a,
            Prompt::Mask => &[],
        }
    }

    /// Point map for point prompts, the mask itself for mask prompts.
    pub fn guidance_video(&self, mask: &BinaryMask, channels: usize) -> Result<VideoTensor> {
        match self {
            Prompt::Points(a) => rasterize_points(
                a,
                Dims::new(mask.frames, mask.height, mask.width, channels),
            ),
            Prompt::Mask => mask.to_video(channels),
        }
    }
}

pub fn sample_prompt(mask: &BinaryMask, policy: &SamplingPolicy, rng: &mut SeededRng) -> Result<Prompt> {
    if policy.mode == DensityMode::FullMask {
        return Ok(Prompt::Mask);
    }
    sample_points_from_mask(mask, policy, rng).map(Prompt::Points)
}

fn resolve_count(count: PointCount, variable: bool, rng: &mut SeededRng) -> PointCount {
    match count {
        PointCount::Range { min, max } if variable => PointCount::Fixed(rng.random_range(min..=max)),
        PointCount::Range { max, .. } => PointCount::Fixed(max),
        other => other,
    }
}

fn mask_cells(mask: &BinaryMask, f: usize, cell: usize) -> usize {
    let rows = mask.height.div_ceil(cell);
    let cols = mask.width.div_ceil(cell);
    let mut n = 0;
    for cr in 0..rows {
        for cc in 0..cols {
            let hit = (cr * cell..((cr + 1) * cell).min(mask.height))
                .any(|r| (cc * cell..((cc + 1) * cell).min(mask.width)).any(|c| mask.get(f, r, c)));
            n += hit as usize;
        }
    }
    n
}

fn count_for_frame(count: PointCount, mask: &BinaryMask, f: usize) -> usize {
    match count {
        PointCount::Fixed(n) => n,
        PointCount::Range { max, .. } => max,
        PointCount::MaskCoverage { fraction, min } => {
            let cells = mask_cells(mask, f, 8);
            ((fraction * cells as f64).ceil() as usize).max(min)
        }
    }
}

/// Pixels of frame `f` whose full square fits inside the mask. Falls back to
/// the deepest interior pixels when the object is smaller than the square.
fn positive_candidates(mask: &BinaryMask, f: usize, size: usize) -> Vec<(usize, usize)> {
    let (h, w) = (mask.height, mask.width);
    let frame = mask.frame(f);
    // Summed-area table with a zero border.
    let mut sat = vec![0u32; (h + 1) * (w + 1)];
    for r in 0..h {
        for c in 0..w {
            sat[(r + 1) * (w + 1) + c + 1] = frame[r * w + c] as u32 + sat[r * (w + 1) + c + 1]
                + sat[(r + 1) * (w + 1) + c]
                - sat[r * (w + 1) + c];
        }
    }
    let half = size / 2;
    let full = (size * size) as u32;
    let mut out = Vec::new();
    for r in half..h {
        for c in half..w {
            let (r0, c0) = (r - half, c - half);
            let (r1, c1) = (r0 + size, c0 + size);
            if r1 > h || c1 > w || !frame[r * w + c] {
                continue;
            }
            let s = sat[r1 * (w + 1) + c1] + sat[r0 * (w + 1) + c0]
                - sat[r0 * (w + 1) + c1]
                - sat[r1 * (w + 1) + c0];
            if s == full {
                out.push((r, c));
            }
        }
    }
    if out.is_empty() && frame.iter().any(|&b| b) {
        // Distance to background, treating outside the frame as background.
        let mut bg = vec![false; (h + 2) * (w + 2)];
        for r in 0..h + 2 {
            for c in 0..w + 2 {
                bg[r * (w + 2) + c] = r == 0 || c == 0 || r == h + 1 || c == w + 1 || !frame[(r - 1) * w + c - 1];
            }
        }
        let depth = chebyshev_distance(&bg, h + 2, w + 2);
        let mut best = 0;
        for r in 0..h {
            for c in 0..w {
                if frame[r * w + c] {
                    best = best.max(depth[(r + 1) * (w + 2) + c + 1]);
                }
            }
        }
        for r in 0..h {
            for c in 0..w {
                if frame[r * w + c] && depth[(r + 1) * (w + 2) + c + 1] == best {
                    out.push((r, c));
                }
            }
        }
    }
    out
}

fn negative_candidates(
    mask: &BinaryMask,
    f: usize,
    size: usize,
    placement: NegativePlacement,
) -> Vec<(usize, usize)> {
    let (h, w) = (mask.height, mask.width);
    let dist = chebyshev_distance(mask.frame(f), h, w);
    let far: Vec<(usize, usize)> = (0..h * w)
        .filter(|&i| dist[i] as usize >= size)
        .map(|i| (i / w, i % w))
        .collect();
    if placement == NegativePlacement::BoundaryBiased {
        let band: Vec<(usize, usize)> = far
            .iter()
            .copied()
            .filter(|&(r, c)| (dist[r * w + c] as usize) < 2 * size)
            .collect();
        if !band.is_empty() {
            return band;
        }
    }
    far
}

fn pick(candidates: &[(usize, usize)], n: usize, rng: &mut SeededRng) -> Vec<(usize, usize)> {
    let n = n.min(candidates.len());
    index::sample(rng, candidates.len(), n)
        .into_iter()
        .map(|i| candidates[i])
        .collect()
}

/// Samples clicks on the policy's keyframes. Positives come from mask pixels
/// whose square fits in the mask; negatives from background at least one
/// point size away. Empty for `FullMask` mode.
pub fn sample_points_from_mask(
    mask: &BinaryMask,
    policy: &SamplingPolicy,
    rng: &mut SeededRng,
) -> Result<Vec<PointAnnotation>> {
    policy.validate()?;
    if policy.mode == DensityMode::FullMask {
        return Ok(Vec::new());
    }
    let variable = policy.mode == DensityMode::VariableDensity;
    let pos_count = resolve_count(policy.positives, variable, rng);
    let neg_count = resolve_count(policy.negatives, variable, rng);
    let size = policy.point_size;

    let mut out = Vec::new();
    let mut wanted_positive = false;
    for f in policy.keyframes(mask.frames) {
        let np = count_for_frame(pos_count, mask, f);
        wanted_positive |= np > 0;
        if np > 0 {
            let cands = positive_candidates(mask, f, size);
            for (r, c) in pick(&cands, np, rng) {
                out.push(PointAnnotation::positive(f, r, c, size));
            }
        }
        let nn = count_for_frame(neg_count, mask, f);
        if nn > 0 {
            let cands = negative_candidates(mask, f, size, policy.negative_placement);
            for (r, c) in pick(&cands, nn, rng) {
                out.push(PointAnnotation::negative(f, r, c, size));
            }
        }
    }
    if wanted_positive && !out.iter().any(|a| a.is_positive()) {
        return Err(Error::Sampling(
            "no eligible positive pixel on any keyframe".into(),
        ));
    }
    Ok(out)
}

fn cross(o: (i64, i64), a: (i64, i64), b: (i64, i64)) -> i64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Andrew's monotone chain; counter-clockwise, no repeated or collinear vertices.
fn convex_hull(mut pts: Vec<(i64, i64)>) -> Vec<(i64, i64)> {
    pts.sort_unstable();
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<(i64, i64)> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(i64, i64)> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

fn fill_hull_frame(
    positives: &[&PointAnnotation],
    height: usize,
    width: usize,
) -> Vec<bool> {
    let mut out = vec![false; height * width];
    let hull = convex_hull(positives.iter().map(|a| (a.row as i64, a.col as i64)).collect());
    if hull.len() >= 3 {
        for r in 0..height {
            for c in 0..width {
                let p = (r as i64, c as i64);
                let inside = (0..hull.len()).all(|i| cross(hull[i], hull[(i + 1) % hull.len()], p) >= 0);
                out[r * width + c] = inside;
            }
        }
    } else {
        // Degenerate hull: the clicks' own squares.
        for a in positives {
            let (rows, cols) = a.square(height, width);
            for r in rows {
                for c in cols.clone() {
                    out[r * width + c] = true;
                }
            }
        }
    }
    out
}

/// Per-keyframe filled convex hull of the positive clicks, held until the
/// next annotated keyframe. Frames before the first keyframe use its hull.
pub fn convex_hull_mask(annotations: &[PointAnnotation], frames: usize, height: usize, width: usize) -> Result<BinaryMask> {
    for (i, a) in annotations.iter().enumerate() {
        a.validate(i, frames, height, width)?;
    }
    let mut keyframes: Vec<usize> = annotations
        .iter()
        .filter(|a| a.is_positive())
        .map(|a| a.frame)
        .collect();
    keyframes.sort_unstable();
    keyframes.dedup();
    if keyframes.is_empty() {
        return Err(Error::Validation("convex hull needs at least one positive point".into()));
    }
    let hulls: Vec<Vec<bool>> = keyframes
        .iter()
        .map(|&k| {
            let pts: Vec<&PointAnnotation> = annotations
                .iter()
                .filter(|a| a.is_positive() && a.frame == k)
                .collect();
            fill_hull_frame(&pts, height, width)
        })
        .collect();
    let mut mask = BinaryMask::empty(frames, height, width);
    for f in 0..frames {
        let which = keyframes.iter().rposition(|&k| k <= f).unwrap_or(0);
        let n = height * width;
        mask.data[f * n..(f + 1) * n].copy_from_slice(&hulls[which]);
    }
    Ok(mask)
}

/// Background-alignment matte: 1 on the square dilation (radius `radius`)
/// of the positive region, decaying linearly to 0 over `feather` pixels of
/// Chebyshev distance. Negative regions contribute nothing.
pub fn dilate_and_feather(point_map: &VideoTensor, radius: usize, feather: usize) -> Result<VideoTensor> {
    let d = point_map.dims();
    let mut out = vec![0.0f32; d.len()];
    let n = d.pixels_per_frame();
    for f in 0..d.frames {
        let positive: Vec<bool> = (0..n)
            .map(|i| point_map.get(f, i / d.width, i % d.width, 0) >= 0.75)
            .collect();
        let dist = chebyshev_distance(&positive, d.height, d.width);
        for (i, &dp) in dist.iter().enumerate() {
            if dp == u32::MAX {
                continue;
            }
            let beyond = (dp as usize).saturating_sub(radius);
            let alpha = if beyond == 0 {
                1.0
            } else if beyond < feather {
                1.0 - beyond as f32 / feather as f32
            } else {
                0.0
            };
            if alpha > 0.0 {
                let base = (f * n + i) * d.channels;
                out[base..base + d.channels].fill(alpha);
            }
        }
    }
    VideoTensor::new(d, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn positive_square_placement() {
        let dims = Dims::new(1, 32, 32, 3);
        let v = rasterize_points(&[PointAnnotation::positive(0, 10, 10, 4)], dims).unwrap();
        for r in 0..32 {
            for c in 0..32 {
                let inside = (8..12).contains(&r) && (8..12).contains(&c);
                for ch in 0..3 {
                    assert_eq!(v.get(0, r, c, ch), if inside { 1.0 } else { 0.0 });
                }
            }
        }
    }

    #[test]
    fn negative_square_value() {
        let dims = Dims::new(1, 32, 32, 3);
        let v = rasterize_points(&[PointAnnotation::negative(0, 10, 10, 4)], dims).unwrap();
        assert_eq!(v.get(0, 8, 8, 2), 0.5);
        assert_eq!(v.get(0, 11, 11, 0), 0.5);
        assert_eq!(v.get(0, 12, 11, 0), 0.0);
    }

    #[test]
    fn positive_wins_on_overlap() {
        let dims = Dims::new(1, 32, 32, 1);
        let a = [
            PointAnnotation::positive(0, 10, 10, 4),
            PointAnnotation::negative(0, 10, 10, 4),
        ];
        let v = rasterize_points(&a, dims).unwrap();
        assert_eq!(v.get(0, 9, 9, 0), 1.0);
        let b = [a[1], a[0]];
        assert_eq!(rasterize_points(&b, dims).unwrap(), v);
    }

    #[test]
    fn border_clipping_and_validation() {
        let dims = Dims::new(2, 8, 8, 1);
        let v = rasterize_points(&[PointAnnotation::positive(1, 0, 7, 5)], dims).unwrap();
        assert_eq!(v.get(1, 0, 7, 0), 1.0);
        assert_eq!(v.get(1, 2, 5, 0), 1.0);
        assert_eq!(v.get(0, 0, 7, 0), 0.0);
        let err = rasterize_points(&[PointAnnotation::positive(2, 0, 0, 2)], dims).unwrap_err();
        assert!(err.to_string().contains("#0"), "{err}");
    }

    fn block_mask(frames: usize) -> BinaryMask {
        BinaryMask::from_fn(frames, 64, 64, |_, r, c| (20..40).contains(&r) && (20..40).contains(&c))
    }

    #[test]
    fn keyframe_sampling_fixed_density() {
        let mask = block_mask(21);
        let policy = SamplingPolicy {
            mode: DensityMode::FixedDensity,
            keyframe_interval: 10,
            positives: PointCount::Fixed(3),
            negatives: PointCount::Fixed(2),
            point_size: 4,
            negative_placement: NegativePlacement::Uniform,
        };
        let pts = sample_points_from_mask(&mask, &policy, &mut SeededRng::new(3)).unwrap();
        let frames: std::collections::BTreeSet<usize> = pts.iter().map(|a| a.frame).collect();
        assert_eq!(frames.into_iter().collect::<Vec<_>>(), vec![0, 10, 20]);
        assert_eq!(pts.iter().filter(|a| a.is_positive()).count(), 9);
        assert_eq!(pts.iter().filter(|a| !a.is_positive()).count(), 6);
        for a in &pts {
            if a.is_positive() {
                let (rows, cols) = a.square(64, 64);
                for r in rows {
                    for c in cols.clone() {
                        assert!(mask.get(a.frame, r, c));
                    }
                }
            } else {
                // Brute-force distance to the block.
                let d = (0..64)
                    .flat_map(|r| (0..64).map(move |c| (r, c)))
                    .filter(|&(r, c)| mask.get(a.frame, r, c))
                    .map(|(r, c): (usize, usize)| r.abs_diff(a.row).max(c.abs_diff(a.col)))
                    .min()
                    .unwrap();
                assert!(d >= 4);
            }
        }
    }

    #[test]
    fn first_frame_only_and_full_mask() {
        let mask = block_mask(21);
        let mut policy = SamplingPolicy {
            mode: DensityMode::FirstFrameOnly,
            point_size: 4,
            ..SamplingPolicy::default()
        };
        let pts = sample_points_from_mask(&mask, &policy, &mut SeededRng::new(1)).unwrap();
        assert!(pts.iter().all(|a| a.frame == 0));
        policy.mode = DensityMode::FullMask;
        assert_eq!(sample_prompt(&mask, &policy, &mut SeededRng::new(1)).unwrap(), Prompt::Mask);
        let g = Prompt::Mask.guidance_video(&mask, 3).unwrap();
        assert_eq!(BinaryMask::from_video(&g).unwrap(), mask);
    }

    #[test]
    fn variable_density_stays_in_range() {
        let mask = block_mask(1);
        let policy = SamplingPolicy {
            mode: DensityMode::VariableDensity,
            positives: PointCount::Range { min: 1, max: 5 },
            negatives: PointCount::Range { min: 0, max: 2 },
            point_size: 4,
            ..SamplingPolicy::default()
        };
        let mut seen = std::collections::BTreeSet::new();
        let mut rng = SeededRng::new(8);
        for _ in 0..200 {
            let pts = sample_points_from_mask(&mask, &policy, &mut rng).unwrap();
            let np = pts.iter().filter(|a| a.is_positive()).count();
            assert!((1..=5).contains(&np));
            seen.insert(np);
        }
        assert_eq!(seen.len(), 5);
    }

    #[test]
    fn empty_mask_is_a_sampling_error() {
        let mask = BinaryMask::empty(9, 32, 32);
        let err = sample_points_from_mask(&mask, &SamplingPolicy::default(), &mut SeededRng::new(0)).unwrap_err();
        assert!(matches!(err, Error::Sampling(_)));
    }

    #[test]
    fn oversized_points_fall_back_to_deepest_pixels() {
        let mask = BinaryMask::from_fn(1, 32, 32, |_, r, c| (10..16).contains(&r) && (10..16).contains(&c));
        let policy = SamplingPolicy { point_size: 20, ..SamplingPolicy::default() };
        let pts = sample_points_from_mask(&mask, &policy, &mut SeededRng::new(0)).unwrap();
        for a in pts.iter().filter(|a| a.is_positive()) {
            assert!((12..14).contains(&a.row) && (12..14).contains(&a.col), "{a:?}");
        }
    }

    #[test]
    fn mask_coverage_counts() {
        let mask = block_mask(1);
        // 20x20 block at 20..40 touches cells 2..=4 in each axis: 9 cells.
        assert_eq!(mask_cells(&mask, 0, 8), 9);
        let c = PointCount::MaskCoverage { fraction: 0.5, min: 1 };
        assert_eq!(count_for_frame(c, &mask, 0), 5);
    }

    #[test]
    fn hull_triangle() {
        let a = [
            PointAnnotation::positive(0, 5, 5, 1),
            PointAnnotation::positive(0, 5, 25, 1),
            PointAnnotation::positive(0, 25, 5, 1),
        ];
        let m = convex_hull_mask(&a, 3, 32, 32).unwrap();
        for p in &a {
            for f in 0..3 {
                assert!(m.get(f, p.row, p.col));
            }
        }
        assert!(m.get(1, 10, 10));
        assert!(!m.get(1, 20, 20));
        assert_eq!(m.frame(0), m.frame(2));
    }

    #[test]
    fn hull_single_point_is_its_square() {
        let a = [PointAnnotation::positive(0, 10, 10, 4)];
        let m = convex_hull_mask(&a, 1, 32, 32).unwrap();
        assert_eq!(m.area(), 16);
        assert!(m.get(0, 8, 8) && m.get(0, 11, 11));
    }

    #[test]
    fn hull_square_corners_brute_force() {
        let a: Vec<_> = [(10, 10), (10, 20), (20, 10), (20, 20)]
            .iter()
            .map(|&(r, c)| PointAnnotation::positive(0, r, c, 2))
            .collect();
        let m = convex_hull_mask(&a, 1, 32, 32).unwrap();
        // Independent oracle: axis-aligned square membership.
        let mut oracle = 0;
        for r in 0..32 {
            for c in 0..32 {
                let inside = (10..=20).contains(&r) && (10..=20).contains(&c);
                oracle += inside as usize;
                assert_eq!(m.get(0, r, c), inside, "({r},{c})");
            }
        }
        assert!(m.area() >= 100);
        assert_eq!(m.area(), oracle);
    }

    #[test]
    fn hull_persists_until_next_keyframe() {
        let a = [
            PointAnnotation::positive(2, 5, 5, 2),
            PointAnnotation::positive(5, 20, 20, 2),
        ];
        let m = convex_hull_mask(&a, 8, 32, 32).unwrap();
        for f in 0..5 {
            assert!(m.get(f, 5, 5) && !m.get(f, 20, 20));
        }
        for f in 5..8 {
            assert!(!m.get(f, 5, 5) && m.get(f, 20, 20));
        }
        assert!(convex_hull_mask(&[PointAnnotation::negative(0, 1, 1, 1)], 1, 8, 8).is_err());
    }

    #[test]
    fn feather_zero_input() {
        let v = VideoTensor::zeros(Dims::new(2, 16, 16, 3)).unwrap();
        let a = dilate_and_feather(&v, 3, 3).unwrap();
        assert!(a.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn hard_dilation_matches_brute_force() {
        let dims = Dims::new(1, 32, 32, 1);
        let p = PointAnnotation::positive(0, 12, 14, 4);
        let map = rasterize_points(&[p], dims).unwrap();
        let alpha = dilate_and_feather(&map, 2, 0).unwrap();
        let (rows, cols) = p.square(32, 32);
        let mut area = 0;
        for r in 0..32usize {
            for c in 0..32usize {
                let near = rows.clone().any(|pr| cols.clone().any(|pc| pr.abs_diff(r) <= 2 && pc.abs_diff(c) <= 2));
                assert_eq!(alpha.get(0, r, c, 0), if near { 1.0 } else { 0.0 });
                area += near as usize;
            }
        }
        assert_eq!(area, 8 * 8);
    }

    #[test]
    fn feather_ramp() {
        let dims = Dims::new(1, 32, 32, 1);
        let map = rasterize_points(&[PointAnnotation::positive(0, 16, 16, 2)], dims).unwrap();
        let alpha = dilate_and_feather(&map, 1, 3).unwrap();
        // Square covers rows/cols 15..=16; dilation reaches 14..=17.
        assert_eq!(alpha.get(0, 14, 16, 0), 1.0);
        assert!((alpha.get(0, 13, 16, 0) - 2.0 / 3.0).abs() < 1e-6);
        assert!((alpha.get(0, 12, 16, 0) - 1.0 / 3.0).abs() < 1e-6);
        assert_eq!(alpha.get(0, 11, 16, 0), 0.0);
        let neg = rasterize_points(&[PointAnnotation::negative(0, 16, 16, 2)], dims).unwrap();
        assert!(dilate_and_feather(&neg, 1, 3).unwrap().data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn chebyshev_transform_matches_brute_force() {
        let mut rng = SeededRng::new(4);
        let (h, w) = (13, 17);
        let frame: Vec<bool> = (0..h * w).map(|_| rng.random_bool(0.05)).collect();
        let d = chebyshev_distance(&frame, h, w);
        for r in 0..h {
            for c in 0..w {
                let want = (0..h * w)
                    .filter(|&i| frame[i])
                    .map(|i| (i / w).abs_diff(r).max((i % w).abs_diff(c)) as u32)
                    .min()
                    .unwrap_or(u32::MAX);
                assert_eq!(d[r * w + c], want);
            }
        }
    }

    #[test]
    fn annotation_json_schema() {
        let a = vec![PointAnnotation::positive(0, 1, 2, 3), PointAnnotation::negative(4, 5, 6, 7)];
        let text = annotations_to_json(&a).unwrap();
        assert!(text.contains("\"polarity\": \"pos\"") && text.contains("\"neg\""));
        assert_eq!(annotations_from_json(&text).unwrap(), a);
    }

    fn arb_points() -> impl Strategy<Value = Vec<PointAnnotation>> {
        prop::collection::vec(
            (0usize..2, 0usize..16, 0usize..16, any::<bool>(), 1usize..6).prop_map(|(f, r, c, p, s)| {
                if p {
                    PointAnnotation::positive(f, r, c, s)
                } else {
                    PointAnnotation::negative(f, r, c, s)
                }
            }),
            0..8,
        )
    }

    proptest! {
        #[test]
        fn raster_values_and_permutation(mut pts in arb_points(), seed in any::<u64>()) {
            let dims = Dims::new(2, 16, 16, 3);
            let v = rasterize_points(&pts, dims).unwrap();
            for px in v.data().chunks_exact(3) {
                prop_assert!(px[0] == 0.0 || px[0] == 0.5 || px[0] == 1.0);
                prop_assert!(px[0] == px[1] && px[1] == px[2]);
            }
            let mut rng = SeededRng::new(seed);
            for i in (1..pts.len()).rev() {
                let j = rng.random_range(0..=i);
                pts.swap(i, j);
            }
            prop_assert_eq!(rasterize_points(&pts, dims).unwrap(), v);
        }

        #[test]
        fn feather_monotone_in_radius(pts in arb_points(), r in 0usize..4, fw in 0usize..4) {
            let v = rasterize_points(&pts, Dims::new(2, 16, 16, 1)).unwrap();
            let a = dilate_and_feather(&v, r, fw).unwrap();
            let b = dilate_and_feather(&v, r + 1, fw).unwrap();
            for (x, y) in a.data().iter().zip(b.data()) {
                prop_assert!(y >= x);
                prop_assert!((0.0..=1.0).contains(x));
            }
        }

        #[test]
        fn hull_contains_positive_pixels(pts in arb_points()) {
            prop_assume!(pts.iter().any(|a| a.is_positive()));
            let m = convex_hull_mask(&pts, 2, 16, 16).unwrap();
            for a in pts.iter().filter(|a| a.is_positive()) {
                prop_assert!(m.get(a.frame, a.row, a.col));
            }
        }

        #[test]
        fn sampled_points_respect_the_mask(seed in any::<u64>(), r0 in 4usize..20, side in 6usize..20) {
            let mask = BinaryMask::from_fn(9, 40, 40, |f, r, c| {
                (r0 + f..r0 + f + side).contains(&r) && (r0..r0 + side).contains(&c)
            });
            let policy = SamplingPolicy {
                keyframe_interval: 4,
                point_size: 3,
                positives: PointCount::Fixed(4),
                negatives: PointCount::Fixed(4),
                ..SamplingPolicy::default()
            };
            let pts = sample_points_from_mask(&mask, &policy, &mut SeededRng::new(seed)).unwrap();
            for a in pts {
                prop_assert_eq!(mask.get(a.frame, a.row, a.col), a.is_positive());
            }
        }
    }
}
