//! Small conditional velocity network with a hand-written backward pass.
//!
//! Per latent position the 48 input channels (condition video latent,
//! guidance latent, noisy latent) are projected to `width` features, then
//! refined by residual 3x3 spatial stencils. Time enters through
//! feature-wise scale and shift read out from 16 sinusoidal features; the
//! class tag through a learned embedding added to the first hidden state.
//!
//! ```text
//! a0  = W_in x + b_in
//! h0  = a0 * (1 + g0(t)) + s0(t) + E[tag]
//! u_l = conv_l(h_{l-1}) + c_l
//! h_l = h_{l-1} + silu(u_l * (1 + g_l(t)) + s_l(t))
//! y   = W_out h_L + b_out
//! ```

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::latent::WeightMap;
use crate::losses::{objective_and_grad, total_loss, LossBreakdown, LossSpec, StopGrad};
use crate::rng::SeededRng;
use crate::tensor::{Dims, LatentTensor, LATENT_CHANNELS};

pub const INPUT_CHANNELS: usize = 3 * LATENT_CHANNELS;
pub const TIME_FEATURES: usize = 16;
pub const MAX_PARAMS: usize = 50_000;
const TAPS: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub width: usize,
    pub hidden_layers: usize,
    pub num_tags: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            width: 24,
            hidden_layers: 2,
            num_tags: 4,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.width > 32 {
            return Err(Error::Validation(format!("width {} outside 1..=32", self.width)));
        }
        if !(2..=3).contains(&self.hidden_layers) {
            return Err(Error::Validation(format!(
                "hidden layer count {} outside 2..=3",
                self.hidden_layers
            )));
        }
        if self.num_tags == 0 {
            return Err(Error::Validation("need at least one condition tag".into()));
        }
        let n = ParamLayout::new(*self).total;
        if n > MAX_PARAMS {
            return Err(Error::Validation(format!("{n} parameters exceed {MAX_PARAMS}")));
        }
        Ok(())
    }
}

/// A named slice of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamGroup {
    pub name: String,
    pub dims: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, Copy)]
struct Film {
    scale_w: usize,
    scale_b: usize,
    shift_w: usize,
    shift_b: usize,
}

#[derive(Debug, Clone)]
struct Offsets {
    in_w: usize,
    in_b: usize,
    tag: usize,
    film: Vec<Film>,
    conv_w: Vec<usize>,
    conv_b: Vec<usize>,
    out_w: usize,
    out_b: usize,
}

#[derive(Debug, Clone)]
pub struct ParamLayout {
    pub groups: Vec<ParamGroup>,
    pub total: usize,
    off: Offsets,
}

impl ParamLayout {
    pub fn new(arch: ArchConfig) -> Self {
        let h = arch.width;
        let mut groups = Vec::new();
        let mut total = 0;
        let mut add = |name: String, dims: Vec<usize>| {
            let len = dims.iter().product();
            let offset = total;
            groups.push(ParamGroup { name, dims, offset, len });
            total += len;
            offset
        };
        let in_w = add("in.w".into(), vec![h, INPUT_CHANNELS]);
        let in_b = add("in.b".into(), vec![h]);
        let tag = add("tag.embedding".into(), vec![arch.num_tags, h]);
        let mut film = Vec::new();
        for s in 0..=arch.hidden_layers {
            film.push(Film {
                scale_w: add(format!("film{s}.scale.w"), vec![h, TIME_FEATURES]),
                scale_b: add(format!("film{s}.scale.b"), vec![h]),
                shift_w: add(format!("film{s}.shift.w"), vec![h, TIME_FEATURES]),
                shift_b: add(format!("film{s}.shift.b"), vec![h]),
            });
        }
        let mut conv_w = Vec::new();
        let mut conv_b = Vec::new();
        for l in 1..=arch.hidden_layers {
            conv_w.push(add(format!("conv{l}.w"), vec![TAPS, h, h]));
            conv_b.push(add(format!("conv{l}.b"), vec![h]));
        }
        let out_w = add("out.w".into(), vec![LATENT_CHANNELS, h]);
        let out_b = add("out.b".into(), vec![LATENT_CHANNELS]);
        Self {
            groups,
            total,
            off: Offsets {
                in_w,
                in_b,
                tag,
                film,
                conv_w,
                conv_b,
                out_w,
                out_b,
            },
        }
    }

    pub fn group(&self, name: &str) -> Option<&ParamGroup> {
        self.groups.iter().find(|g| g.name == name)
    }
}

/// Network weights, stored flat in f64.
#[derive(Debug, Clone)]
pub struct DenoiserParams {
    arch: ArchConfig,
    layout: ParamLayout,
    values: Vec<f64>,
}

impl PartialEq for DenoiserParams {
    fn eq(&self, other: &Self) -> bool {
        self.arch == other.arch && self.values == other.values
    }
}

/// Gradient with the same layout as [`DenoiserParams`].
pub type Gradients = Vec<f64>;

fn normal(rng: &mut SeededRng, std: f64) -> f64 {
    Normal::new(0.0, std).expect("valid std").sample(rng)
}

impl DenoiserParams {
    pub fn zeros(arch: ArchConfig) -> Result<Self> {
        arch.validate()?;
        let layout = ParamLayout::new(arch);
        Ok(Self {
            arch,
            values: vec![0.0; layout.total],
            layout,
        })
    }

    /// Scaled-normal initialisation; biases start at zero.
    pub fn init(arch: ArchConfig, rng: &mut SeededRng) -> Result<Self> {
        let mut p = Self::zeros(arch)?;
        let h = arch.width as f64;
        let groups = p.layout.groups.clone();
        for g in &groups {
            let std = match g.name.as_str() {
                "in.w" => (1.0 / INPUT_CHANNELS as f64).sqrt(),
                "tag.embedding" => 0.3,
                "out.w" => 0.5 / h.sqrt(),
                n if n.starts_with("conv") && n.ends_with(".w") => 0.5 / (TAPS as f64 * h).sqrt(),
                n if n.starts_with("film") && n.ends_with(".w") => 0.1 / (TIME_FEATURES as f64).sqrt(),
                _ => 0.0,
            };
            if std > 0.0 {
                for v in &mut p.values[g.offset..g.offset + g.len] {
                    *v = normal(rng, std);
                }
            }
        }
        p.round_to_storage();
        Ok(p)
    }

    pub fn from_values(arch: ArchConfig, values: Vec<f64>) -> Result<Self> {
        let mut p = Self::zeros(arch)?;
        if values.len() != p.values.len() {
            return Err(Error::Validation(format!(
                "expected {} parameters, got {}",
                p.values.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("parameter {i} is not finite")));
        }
        p.values = values;
        Ok(p)
    }

    pub fn arch(&self) -> ArchConfig {
        self.arch
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn group_values(&self, name: &str) -> Option<&[f64]> {
        self.layout
            .group(name)
            .map(|g| &self.values[g.offset..g.offset + g.len])
    }

    pub fn group_values_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let g = self.layout.group(name)?.clone();
        Some(&mut self.values[g.offset..g.offset + g.len])
    }

    /// Rounds every weight to f32 precision, the on-disk width, so saved
    /// checkpoints reload bit-identically.
    pub fn round_to_storage(&mut self) {
        self.values.iter_mut().for_each(|v| *v = *v as f32 as f64);
    }

    /// SHA-256 over the little-endian f64 weights, hex encoded.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for v in &self.values {
            h.update(v.to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn time_features(t: f64) -> [f64; TIME_FEATURES] {
    let mut out = [0.0; TIME_FEATURES];
    let half = TIME_FEATURES / 2;
    for j in 0..half {
        let w = std::f64::consts::PI * 1.75f64.powi(j as i32);
        out[j] = (w * t).sin();
        out[j + half] = (w * t).cos();
    }
    out
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Inputs for one network evaluation.
#[derive(Debug, Clone, Copy)]
pub struct ModelInput<'a> {
    pub cond: &'a LatentTensor,
    pub guidance: &'a LatentTensor,
    pub z_t: &'a LatentTensor,
    pub t: f64,
    pub tag: usize,
}

struct Geometry {
    frames: usize,
    height: usize,
    width: usize,
}

impl Geometry {
    fn positions(&self) -> usize {
        self.frames * self.height * self.width
    }
}

struct Cache {
    geo: Geometry,
    x: Vec<f64>,
    phi: [f64; TIME_FEATURES],
    gamma: Vec<Vec<f64>>,
    a0: Vec<f64>,
    /// h[0..=L]
    h: Vec<Vec<f64>>,
    /// pre-FiLM conv response per hidden layer
    u: Vec<Vec<f64>>,
    /// post-FiLM pre-activation per hidden layer
    pre: Vec<Vec<f64>>,
    tag: usize,
}

impl DenoiserParams {
    fn check_input(&self, inp: &ModelInput) -> Result<Geometry> {
        let d = inp.z_t.dims();
        inp.cond.ensure_same_shape(inp.z_t)?;
        inp.guidance.ensure_same_shape(inp.z_t)?;
        if d.channels != LATENT_CHANNELS {
            return Err(Error::shape(&d.with_channels(LATENT_CHANNELS).as_vec(), &d.as_vec()));
        }
        if inp.tag >= self.arch.num_tags {
            return Err(Error::Validation(format!(
                "tag {} outside 0..{}",
                inp.tag, self.arch.num_tags
            )));
        }
        if !inp.t.is_finite() {
            return Err(Error::Validation("timestep is not finite".into()));
        }
        Ok(Geometry {
            frames: d.frames,
            height: d.height,
            width: d.width,
        })
    }

    fn film(&self, s: usize, phi: &[f64; TIME_FEATURES]) -> (Vec<f64>, Vec<f64>) {
        let h = self.arch.width;
        let f = self.layout.off.film[s];
        let v = &self.values;
        let read = |w: usize, b: usize| -> Vec<f64> {
            (0..h)
                .map(|o| {
                    v[b + o]
                        + (0..TIME_FEATURES)
                            .map(|k| v[w + o * TIME_FEATURES + k] * phi[k])
                            .sum::<f64>()
                })
                .collect()
        };
        (read(f.scale_w, f.scale_b), read(f.shift_w, f.shift_b))
    }

    /// conv over each latent frame with zero padding; `out` is accumulated.
    fn conv(&self, layer: usize, geo: &Geometry, input: &[f64], out: &mut [f64]) {
        let h = self.arch.width;
        let w = &self.values[self.layout.off.conv_w[layer]..];
        for f in 0..geo.frames {
            for r in 0..geo.height {
                for c in 0..geo.width {
                    let p = (f * geo.height + r) * geo.width + c;
                    let dst = &mut out[p * h..(p + 1) * h];
                    for tap in 0..TAPS {
                        let (dr, dc) = (tap / 3, tap % 3);
                        let (Some(rr), Some(cc)) = ((r + dr).checked_sub(1), (c + dc).checked_sub(1)) else {
                            continue;
                        };
                        if rr >= geo.height || cc >= geo.width {
                            continue;
                        }
                        let q = (f * geo.height + rr) * geo.width + cc;
                        let src = &input[q * h..(q + 1) * h];
                        let k = &w[tap * h * h..(tap + 1) * h * h];
                        for (o, d) in dst.iter_mut().enumerate() {
                            let row = &k[o * h..(o + 1) * h];
                            *d += row.iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Self::conv`]: accumulates weight and input gradients.
    fn conv_backward(
        &self,
        layer: usize,
        geo: &Geometry,
        input: &[f64],
        g_out: &[f64],
        g_w: &mut [f64],
        g_in: &mut [f64],
    ) {
        let h = self.arch.width;
        let w = &self.values[self.layout.off.conv_w[layer]..];
        for f in 0..geo.frames {
            for r in 0..geo.height {
                for c in 0..geo.width {
                    let p = (f * geo.height + r) * geo.width + c;
                    let go = &g_out[p * h..(p + 1) * h];
                    for tap in 0..TAPS {
                        let (dr, dc) = (tap / 3, tap % 3);
                        let (Some(rr), Some(cc)) = ((r + dr).checked_sub(1), (c + dc).checked_sub(1)) else {
                            continue;
                        };
                        if rr >= geo.height || cc >= geo.width {
                            continue;
                        }
                        let q = (f * geo.height + rr) * geo.width + cc;
                        let src = &input[q * h..(q + 1) * h];
                        let k = &w[tap * h * h..(tap + 1) * h * h];
                        let gk = &mut g_w[tap * h * h..(tap + 1) * h * h];
                        let gi = &mut g_in[q * h..(q + 1) * h];
                        for (o, &g) in go.iter().enumerate() {
                            if g == 0.0 {
                                continue;
                            }
                            let krow = &k[o * h..(o + 1) * h];
                            let gkrow = &mut gk[o * h..(o + 1) * h];
                            for i in 0..h {
                                gkrow[i] += g * src[i];
                                gi[i] += g * krow[i];
                            }
                        }
                    }
                }
            }
        }
    }

    fn forward_cached(&self, inp: &ModelInput) -> Result<(Vec<f64>, Cache)> {
        let geo = self.check_input(inp)?;
        let (h, n) = (self.arch.width, geo.positions());
        let v = &self.values;
        let off = &self.layout.off;

        let k = LATENT_CHANNELS;
        let mut x = vec![0.0; n * INPUT_CHANNELS];
        for p in 0..n {
            for (slot, src) in [inp.cond, inp.guidance, inp.z_t].iter().enumerate() {
                for ch in 0..k {
                    x[p * INPUT_CHANNELS + slot * k + ch] = src.data()[p * k + ch] as f64;
                }
            }
        }
        let phi = time_features(inp.t);
        let mut gamma = Vec::new();
        let mut beta = Vec::new();
        for s in 0..=self.arch.hidden_layers {
            let (g, b) = self.film(s, &phi);
            gamma.push(g);
            beta.push(b);
        }

        let mut a0 = vec![0.0; n * h];
        let mut h0 = vec![0.0; n * h];
        let emb = &v[off.tag + inp.tag * h..off.tag + (inp.tag + 1) * h];
        for p in 0..n {
            let xp = &x[p * INPUT_CHANNELS..(p + 1) * INPUT_CHANNELS];
            for o in 0..h {
                let row = &v[off.in_w + o * INPUT_CHANNELS..off.in_w + (o + 1) * INPUT_CHANNELS];
                let a = v[off.in_b + o] + row.iter().zip(xp).map(|(w, x)| w * x).sum::<f64>();
                a0[p * h + o] = a;
                h0[p * h + o] = a * (1.0 + gamma[0][o]) + beta[0][o] + emb[o];
            }
        }

        let mut hs = vec![h0];
        let mut us = Vec::new();
        let mut pres = Vec::new();
        for l in 0..self.arch.hidden_layers {
            let prev = hs.last().expect("h0 present");
            let mut u = vec![0.0; n * h];
            for p in 0..n {
                u[p * h..(p + 1) * h].copy_from_slice(&v[off.conv_b[l]..off.conv_b[l] + h]);
            }
            self.conv(l, &geo, prev, &mut u);
            let mut pre = vec![0.0; n * h];
            let mut next = prev.clone();
            for p in 0..n {
                for o in 0..h {
                    let z = u[p * h + o] * (1.0 + gamma[l + 1][o]) + beta[l + 1][o];
                    pre[p * h + o] = z;
                    next[p * h + o] += z * sigmoid(z);
                }
            }
            us.push(u);
            pres.push(pre);
            hs.push(next);
        }

        let last = hs.last().expect("at least h0");
        let mut y = vec![0.0; n * k];
        for p in 0..n {
            let hp = &last[p * h..(p + 1) * h];
            for o in 0..k {
                let row = &v[off.out_w + o * h..off.out_w + (o + 1) * h];
                y[p * k + o] = v[off.out_b + o] + row.iter().zip(hp).map(|(w, x)| w * x).sum::<f64>();
            }
        }
        Ok((
            y,
            Cache {
                geo,
                x,
                phi,
                gamma,
                a0,
                h: hs,
                u: us,
                pre: pres,
                tag: inp.tag,
            },
        ))
    }

    fn backward_into(&self, cache: &Cache, gy: &[f64], g: &mut [f64]) {
        let (h, n, k) = (self.arch.width, cache.geo.positions(), LATENT_CHANNELS);
        let v = &self.values;
        let off = &self.layout.off;
        let layers = self.arch.hidden_layers;

        let last = &cache.h[layers];
        let mut gh = vec![0.0; n * h];
        for p in 0..n {
            let hp = &last[p * h..(p + 1) * h];
            for o in 0..k {
                let go = gy[p * k + o];
                if go == 0.0 {
                    continue;
                }
                g[off.out_b + o] += go;
                for i in 0..h {
                    g[off.out_w + o * h + i] += go * hp[i];
                    gh[p * h + i] += go * v[off.out_w + o * h + i];
                }
            }
        }

        let mut g_gamma = vec![vec![0.0; h]; layers + 1];
        let mut g_beta = vec![vec![0.0; h]; layers + 1];
        for l in (0..layers).rev() {
            let (u, pre) = (&cache.u[l], &cache.pre[l]);
            let mut gu = vec![0.0; n * h];
            for p in 0..n {
                for o in 0..h {
                    let z = pre[p * h + o];
                    let s = sigmoid(z);
                    let gpre = gh[p * h + o] * s * (1.0 + z * (1.0 - s));
                    g_beta[l + 1][o] += gpre;
                    g_gamma[l + 1][o] += gpre * u[p * h + o];
                    let gi = gpre * (1.0 + cache.gamma[l + 1][o]);
                    gu[p * h + o] = gi;
                    g[off.conv_b[l] + o] += gi;
                }
            }
            // Residual path keeps gh; the conv adds its input gradient.
            let (cw, len) = (off.conv_w[l], TAPS * h * h);
            let mut gw = vec![0.0; len];
            self.conv_backward(l, &cache.geo, &cache.h[l], &gu, &mut gw, &mut gh);
            for (dst, src) in g[cw..cw + len].iter_mut().zip(&gw) {
                *dst += src;
            }
        }

        let tag_off = off.tag + cache.tag * h;
        for p in 0..n {
            let xp = &cache.x[p * INPUT_CHANNELS..(p + 1) * INPUT_CHANNELS];
            for o in 0..h {
                let g0 = gh[p * h + o];
                if g0 == 0.0 {
                    continue;
                }
                g[tag_off + o] += g0;
                g_beta[0][o] += g0;
                g_gamma[0][o] += g0 * cache.a0[p * h + o];
                let ga = g0 * (1.0 + cache.gamma[0][o]);
                g[off.in_b + o] += ga;
                let row = off.in_w + o * INPUT_CHANNELS;
                for (i, &xi) in xp.iter().enumerate() {
                    g[row + i] += ga * xi;
                }
            }
        }

        for s in 0..=layers {
            let f = off.film[s];
            for o in 0..h {
                g[f.scale_b + o] += g_gamma[s][o];
                g[f.shift_b + o] += g_beta[s][o];
                for kk in 0..TIME_FEATURES {
                    g[f.scale_w + o * TIME_FEATURES + kk] += g_gamma[s][o] * cache.phi[kk];
                    g[f.shift_w + o * TIME_FEATURES + kk] += g_beta[s][o] * cache.phi[kk];
                }
            }
        }
    }

    /// Predicted velocity, shaped like `z_t`.
    pub fn forward(&self, inp: &ModelInput) -> Result<LatentTensor> {
        let (y, cache) = self.forward_cached(inp)?;
        let d = Dims::new(cache.geo.frames, cache.geo.height, cache.geo.width, LATENT_CHANNELS);
        LatentTensor::new(d, y.into_iter().map(|v| v as f32).collect())
    }
}

/// One supervised example in latent space.
#[derive(Debug, Clone)]
pub struct Example {
    pub cond: LatentTensor,
    pub guidance: LatentTensor,
    pub z_t: LatentTensor,
    pub t: f64,
    pub tag: usize,
    /// Ground-truth velocity `eps - z`.
    pub target: LatentTensor,
    pub teacher: Option<StopGrad>,
    pub weights: Option<WeightMap>,
}

impl Example {
    pub fn input(&self) -> ModelInput<'_> {
        ModelInput {
            cond: &self.cond,
            guidance: &self.guidance,
            z_t: &self.z_t,
            t: self.t,
            tag: self.tag,
        }
    }
}

fn example_objective(
    params: &DenoiserParams,
    ex: &Example,
    spec: &LossSpec,
    grads: Option<&mut [f64]>,
) -> Result<(f64, f64, f64)> {
    let (y, cache) = params.forward_cached(&ex.input())?;
    ex.target.ensure_same_shape(&ex.z_t)?;
    if let Some(t) = &ex.teacher {
        t.value().ensure_same_shape(&ex.z_t)?;
    }
    if let Some(w) = &ex.weights {
        w.as_latent().ensure_same_shape(&ex.z_t)?;
    }
    let mut gy = vec![0.0; y.len()];
    let parts = objective_and_grad(
        &y,
        ex.target.data(),
        ex.teacher.as_ref().map(|t| t.value().data()),
        ex.weights.as_ref().map(|w| w.data()),
        spec,
        &mut gy,
    );
    if let Some(g) = grads {
        params.backward_into(&cache, &gy, g);
    }
    Ok(parts)
}

fn combine(parts: &[(f64, f64, f64)], spec: &LossSpec) -> Result<LossBreakdown> {
    let n = parts.len() as f64;
    let (fm, etd, pa) = parts.iter().fold((0.0, 0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1, a.2 + p.2));
    let (fm, etd, pa) = (fm / n, etd / n, pa / n);
    if !(fm.is_finite() && etd.is_finite() && pa.is_finite()) {
        return Err(Error::Numerical {
            step: 0,
            reason: format!("non-finite loss (fm {fm}, etd {etd}, pa {pa})"),
        });
    }
    total_loss(fm, etd, pa, spec.lambda1, spec.lambda2)
}

/// Batch-mean objective without gradients.
pub fn batch_loss(params: &DenoiserParams, batch: &[Example], spec: &LossSpec) -> Result<LossBreakdown> {
    if batch.is_empty() {
        return Err(Error::Validation("empty batch".into()));
    }
    let parts = batch
        .iter()
        .map(|ex| example_objective(params, ex, spec, None))
        .collect::<Result<Vec<_>>>()?;
    combine(&parts, spec)
}

/// Loss and gradient of the batch-mean objective. Examples are evaluated in
/// parallel and their gradients summed in batch order.
pub fn backward(params: &DenoiserParams, batch: &[Example], spec: &LossSpec) -> Result<(LossBreakdown, Gradients)> {
    if batch.is_empty() {
        return Err(Error::Validation("empty batch".into()));
    }
    let per: Vec<((f64, f64, f64), Vec<f64>)> = batch
        .par_iter()
        .map(|ex| {
            let mut g = vec![0.0; params.len()];
            example_objective(params, ex, spec, Some(&mut g)).map(|p| (p, g))
        })
        .collect::<Result<Vec<_>>>()?;
    let parts: Vec<_> = per.iter().map(|(p, _)| *p).collect();
    let loss = combine(&parts, spec)?;
    let inv = 1.0 / batch.len() as f64;
    let mut grads = vec![0.0; params.len()];
    for (_, g) in &per {
        for (acc, v) in grads.iter_mut().zip(g) {
            *acc += v;
        }
    }
    grads.iter_mut().for_each(|g| *g *= inv);
    Ok((loss, grads))
}
