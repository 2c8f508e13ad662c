//! Analytic scene rendering. Backgrounds are functions of world
//! coordinates, so a horizontal camera pan is a pure shift; objects are
//! drawn in screen coordinates without anti-aliasing, so their masks are
//! exact.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pointmap::BinaryMask;
use crate::rng::SeededRng;
use crate::tensor::{Dims, VideoTensor};

pub type Rgb = [f32; 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Background {
    Flat { color: Rgb },
    /// Linear blend; horizontal gradients repeat as a triangle wave of
    /// `period` world pixels so panning never runs off the ramp.
    Gradient { from: Rgb, to: Rgb, horizontal: bool, period: f64 },
    Checker { a: Rgb, b: Rgb, cell: usize },
    /// Bilinear value noise on a lattice of `scale` pixels.
    Noise { base: Rgb, amplitude: f32, scale: f64, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Disk { radius: f64 },
    /// Axis-aligned; covers pixels within `side / 2` in both axes.
    Square { side: f64 },
}

impl Shape {
    fn extent(&self) -> f64 {
        match *self {
            Shape::Disk { radius } => radius,
            Shape::Square { side } => side / 2.0,
        }
    }

    fn covers(&self, dr: f64, dc: f64) -> bool {
        match *self {
            Shape::Disk { radius } => dr * dr + dc * dc <= radius * radius,
            Shape::Square { side } => dr.abs() <= side / 2.0 && dc.abs() <= side / 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Trajectory {
    Linear { start: (f64, f64), velocity: (f64, f64) },
    Sinusoidal {
        center: (f64, f64),
        amplitude: (f64, f64),
        period: f64,
        phase: f64,
    },
}

impl Trajectory {
    /// Object centre (row, col) at frame `k`.
    pub fn position(&self, k: usize) -> (f64, f64) {
        let k = k as f64;
        match *self {
            Trajectory::Linear { start, velocity } => (start.0 + velocity.0 * k, start.1 + velocity.1 * k),
            Trajectory::Sinusoidal {
                center,
                amplitude,
                period,
                phase,
            } => {
                let s = (std::f64::consts::TAU * k / period + phase).sin();
                (center.0 + amplitude.0 * s, center.1 + amplitude.1 * s)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub shape: Shape,
    pub color: Rgb,
    pub trajectory: Trajectory,
    pub class_tag: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub background: Background,
    /// Horizontal camera pan in pixels per frame.
    pub pan: f64,
    pub objects: Vec<SceneObject>,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Permit objects that leave the frame.
    #[serde(default)]
    pub allow_partial: bool,
}

fn check_rgb(c: &Rgb, what: &str) -> Result<()> {
    if c.iter().all(|v| (0.0..=1.0).contains(v)) {
        Ok(())
    } else {
        Err(Error::Spec(format!("{what} colour {c:?} outside [0, 1]")))
    }
}

impl SceneSpec {
    pub fn dims(&self) -> Dims {
        Dims::new(self.frames, self.height, self.width, 3)
    }

    pub fn validate(&self) -> Result<()> {
        VideoTensor::validate_dims(self.dims()).map_err(|e| Error::Spec(e.to_string()))?;
        if !self.pan.is_finite() {
            return Err(Error::Spec("pan velocity is not finite".into()));
        }
        match &self.background {
            Background::Flat { color } => check_rgb(color, "background")?,
            Background::Gradient { from, to, period, .. } => {
                check_rgb(from, "gradient")?;
                check_rgb(to, "gradient")?;
                if !(*period > 0.0) {
                    return Err(Error::Spec("gradient period must be positive".into()));
                }
            }
            Background::Checker { a, b, cell } => {
                check_rgb(a, "checker")?;
                check_rgb(b, "checker")?;
                if *cell == 0 {
                    return Err(Error::Spec("checker cell must be >= 1".into()));
                }
            }
            Background::Noise {
                base, amplitude, scale, ..
            } => {
                check_rgb(base, "noise base")?;
                if !(*scale > 0.0) || !(*amplitude >= 0.0) {
                    return Err(Error::Spec("noise scale and amplitude must be positive".into()));
                }
            }
        }
        for (i, o) in self.objects.iter().enumerate() {
            check_rgb(&o.color, "object")?;
            if !(o.shape.extent() > 0.0) {
                return Err(Error::Spec(format!("object {i} has non-positive size")));
            }
            if let Trajectory::Sinusoidal { period, .. } = o.trajectory {
                if !(period > 0.0) {
                    return Err(Error::Spec(format!("object {i} has non-positive period")));
                }
            }
            if !self.allow_partial && !self.object_inside(o) {
                return Err(Error::Spec(format!("object {i} leaves the frame")));
            }
        }
        Ok(())
    }

    /// True if the object's bounding box stays inside the frame on every frame.
    pub fn object_inside(&self, o: &SceneObject) -> bool {
        let e = o.shape.extent();
        (0..self.frames).all(|k| {
            let (r, c) = o.trajectory.position(k);
            r - e >= 0.0 && c - e >= 0.0 && r + e <= (self.height - 1) as f64 && c + e <= (self.width - 1) as f64
        })
    }

    pub fn without_objects(&self) -> SceneSpec {
        SceneSpec {
            objects: Vec::new(),
            ..self.clone()
        }
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn lattice(seed: u64, i: i64, j: i64, ch: usize) -> f64 {
    let h = splitmix(seed ^ splitmix(i as u64 ^ splitmix(j as u64 ^ splitmix(ch as u64))));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

impl Background {
    /// Colour at screen row `r` and world column `x`.
    pub fn sample(&self, r: f64, x: f64) -> Rgb {
        match self {
            Background::Flat { color } => *color,
            Background::Gradient {
                from,
                to,
                horizontal,
                period,
            } => {
                let t = if *horizontal {
                    let p = (x / period).rem_euclid(2.0);
                    if p <= 1.0 { p } else { 2.0 - p }
                } else {
                    (r / period).clamp(0.0, 1.0)
                };
                std::array::from_fn(|i| lerp(from[i] as f64, to[i] as f64, t) as f32)
            }
            Background::Checker { a, b, cell } => {
                let cell = *cell as f64;
                let parity = ((r / cell).floor() as i64 + (x / cell).floor() as i64).rem_euclid(2);
                if parity == 0 { *a } else { *b }
            }
            Background::Noise {
                base,
                amplitude,
                scale,
                seed,
            } => {
                let (u, v) = (r / scale, x / scale);
                let (i, j) = (u.floor(), v.floor());
                let (fu, fv) = (u - i, v - j);
                let (i, j) = (i as i64, j as i64);
                std::array::from_fn(|ch| {
                    let n = lerp(
                        lerp(lattice(*seed, i, j, ch), lattice(*seed, i, j + 1, ch), fv),
                        lerp(lattice(*seed, i + 1, j, ch), lattice(*seed, i + 1, j + 1, ch), fv),
                        fu,
                    );
                    (base[ch] as f64 + *amplitude as f64 * (n - 0.5)).clamp(0.0, 1.0) as f32
                })
            }
        }
    }
}

/// Renders the scene; returns the video, the union mask of all objects and
/// the class tag of the first object.
pub fn synth_scene(spec: &SceneSpec) -> Result<(VideoTensor, BinaryMask, Option<usize>)> {
    spec.validate()?;
    let d = spec.dims();
    let mut data = vec![0.0f32; d.len()];
    let mut mask = BinaryMask::empty(d.frames, d.height, d.width);
    for k in 0..d.frames {
        let centres: Vec<(f64, f64)> = spec.objects.iter().map(|o| o.trajectory.position(k)).collect();
        for r in 0..d.height {
            for c in 0..d.width {
                let mut px = spec.background.sample(r as f64, c as f64 + spec.pan * k as f64);
                for (o, &(cy, cx)) in spec.objects.iter().zip(&centres) {
                    if o.shape.covers(r as f64 - cy, c as f64 - cx) {
                        px = o.color;
                        mask.set(k, r, c, true);
                    }
                }
                let i = d.index(k, r, c, 0);
                data[i..i + 3].copy_from_slice(&px);
            }
        }
    }
    let video = VideoTensor::new(d, data)?;
    Ok((video, mask, spec.objects.first().map(|o| o.class_tag)))
}

/// Mean per-frame object area fraction.
pub fn area_fraction(mask: &BinaryMask) -> f64 {
    let n = (mask.height * mask.width) as f64;
    (0..mask.frames).map(|f| mask.frame_area(f) as f64 / n).sum::<f64>() / mask.frames as f64
}

pub const SCALE_LOW: f64 = 0.005;
pub const SCALE_HIGH: f64 = 0.50;

/// Accepts iff the mean object area fraction lies in `[low, high]`.
pub fn scale_filter(mask: &BinaryMask, low: f64, high: f64) -> bool {
    (low..=high).contains(&area_fraction(mask))
}

/// Appearance per class tag: shape family and colour.
pub fn class_appearance(tag: usize) -> (bool, Rgb) {
    const PALETTE: [(bool, Rgb); 6] = [
        (true, [0.92, 0.12, 0.10]),
        (false, [0.10, 0.85, 0.15]),
        (true, [0.12, 0.20, 0.95]),
        (false, [0.95, 0.90, 0.08]),
        (true, [0.90, 0.10, 0.90]),
        (false, [0.08, 0.90, 0.92]),
    ];
    PALETTE[tag % PALETTE.len()]
}

fn muted(rng: &mut SeededRng) -> Rgb {
    let base: f32 = rng.random_range(0.32..0.58);
    std::array::from_fn(|_| base + rng.random_range(-0.05..0.05))
}

fn random_background(rng: &mut SeededRng) -> Background {
    match rng.random_range(0..4) {
        0 => Background::Flat { color: muted(rng) },
        1 => Background::Gradient {
            from: muted(rng),
            to: muted(rng),
            horizontal: rng.random_bool(0.5),
            period: rng.random_range(48.0..128.0),
        },
        2 => Background::Checker {
            a: muted(rng),
            b: muted(rng),
            cell: rng.random_range(4..=12),
        },
        _ => Background::Noise {
            base: muted(rng),
            amplitude: rng.random_range(0.1..0.25),
            scale: rng.random_range(6.0..16.0),
            seed: rng.random(),
        },
    }
}

/// A random single-object scene whose object has the given class.
pub fn random_scene(class_tag: usize, frames: usize, height: usize, width: usize, rng: &mut SeededRng) -> Result<SceneSpec> {
    let (disk, color) = class_appearance(class_tag);
    let short = height.min(width) as f64;
    for _ in 0..64 {
        let extent = rng.random_range(0.12 * short..0.2 * short);
        let shape = if disk {
            Shape::Disk { radius: extent }
        } else {
            Shape::Square { side: 2.0 * extent }
        };
        let centre = (
            rng.random_range(extent..height as f64 - 1.0 - extent),
            rng.random_range(extent..width as f64 - 1.0 - extent),
        );
        let trajectory = if rng.random_bool(0.5) {
            Trajectory::Linear {
                start: centre,
                velocity: (rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)),
            }
        } else {
            Trajectory::Sinusoidal {
                center: centre,
                amplitude: (rng.random_range(0.0..4.0), rng.random_range(0.0..4.0)),
                period: rng.random_range(6.0..16.0),
                phase: rng.random_range(0.0..std::f64::consts::TAU),
            }
        };
        let spec = SceneSpec {
            background: random_background(rng),
            pan: rng.random_range(-1.0..1.0),
            objects: vec![SceneObject {
                shape,
                color,
                trajectory,
                class_tag,
            }],
            frames,
            height,
            width,
            allow_partial: false,
        };
        if spec.validate().is_ok() {
            return Ok(spec);
        }
    }
    Err(Error::Generation("could not place an object inside the frame".into()))
}
