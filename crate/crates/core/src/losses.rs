//! Flow-matching noising, velocity targets and the three training losses.
//!
//! `z_t = t * eps + (1 - t) * z`, target velocity `v = eps - z`. The student
//! objective is `L_fm + lambda1 * L_etd + lambda2 * L_pa`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::WeightMap;
use crate::tensor::LatentTensor;

pub const DEFAULT_LAMBDA1: f64 = 1.5;
pub const DEFAULT_LAMBDA2: f64 = 1.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    /// Mean over elements; keeps loss weights resolution independent.
    #[default]
    Mean,
    /// Plain squared norm.
    Sum,
}

impl Reduction {
    fn scale(self, n: usize) -> f64 {
        match self {
            Reduction::Mean => 1.0 / n.max(1) as f64,
            Reduction::Sum => 1.0,
        }
    }
}

/// Teacher output treated as a constant: no gradient flows back through it.
#[derive(Debug, Clone, PartialEq)]
pub struct StopGrad(LatentTensor);

impl StopGrad {
    pub fn new(v: LatentTensor) -> Self {
        Self(v)
    }

    pub fn value(&self) -> &LatentTensor {
        &self.0
    }
}

pub fn noisy_latent(z: &LatentTensor, eps: &LatentTensor, t: f64) -> Result<LatentTensor> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Validation(format!("timestep {t} outside [0, 1]")));
    }
    let t = t as f32;
    // Endpoints are exact: t = 0 gives z, t = 1 gives eps.
    z.zip_with(eps, |z, e| {
        if t == 0.0 {
            z
        } else if t == 1.0 {
            e
        } else {
            t * e + (1.0 - t) * z
        }
    })
}

pub fn velocity_target(z: &LatentTensor, eps: &LatentTensor) -> Result<LatentTensor> {
    z.zip_with(eps, |z, e| e - z)
}

fn sq_sum(a: &[f32], b: &[f32], w: Option<&[f32]>) -> f64 {
    match w {
        None => a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum(),
        Some(w) => a
            .iter()
            .zip(b)
            .zip(w)
            .map(|((&x, &y), &w)| (w as f64 * (x as f64 - y as f64)).powi(2))
            .sum(),
    }
}

pub fn fm_loss(v_s: &LatentTensor, v_t: &LatentTensor) -> Result<f64> {
    fm_loss_with(v_s, v_t, Reduction::Mean)
}

pub fn fm_loss_with(v_s: &LatentTensor, v_t: &LatentTensor, red: Reduction) -> Result<f64> {
    v_s.ensure_same_shape(v_t)?;
    Ok(red.scale(v_s.data().len()) * sq_sum(v_s.data(), v_t.data(), None))
}

pub fn etd_loss(v_s: &LatentTensor, v_teacher: &StopGrad) -> Result<f64> {
    fm_loss(v_s, v_teacher.value())
}

pub fn pa_loss(v_s: &LatentTensor, v_t: &LatentTensor, w: &WeightMap) -> Result<f64> {
    pa_loss_with(v_s, v_t, w, Reduction::Mean)
}

pub fn pa_loss_with(v_s: &LatentTensor, v_t: &LatentTensor, w: &WeightMap, red: Reduction) -> Result<f64> {
    v_s.ensure_same_shape(v_t)?;
    v_s.ensure_same_shape(w.as_latent())?;
    Ok(red.scale(v_s.data().len()) * sq_sum(v_s.data(), v_t.data(), Some(w.data())))
}

/// Components of one loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_fm: f64,
    pub l_etd: f64,
    pub l_pa: f64,
    pub total: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

pub fn total_loss(l_fm: f64, l_etd: f64, l_pa: f64, lambda1: f64, lambda2: f64) -> Result<LossBreakdown> {
    for (name, v) in [("l_fm", l_fm), ("l_etd", l_etd), ("l_pa", l_pa)] {
        if v.is_nan() || v < 0.0 {
            return Err(Error::Validation(format!("loss component {name} = {v} is negative")));
        }
    }
    Ok(LossBreakdown {
        l_fm,
        l_etd,
        l_pa,
        total: l_fm + lambda1 * l_etd + lambda2 * l_pa,
        lambda1,
        lambda2,
    })
}

/// Loss weights and options for a training objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub lambda1: f64,
    pub lambda2: f64,
    #[serde(default)]
    pub reduction: Reduction,
    /// Also weight the distillation residual by the point weight map.
    #[serde(default)]
    pub weight_etd: bool,
}

impl LossSpec {
    /// Flow matching only.
    pub fn fm_only() -> Self {
        Self {
            lambda1: 0.0,
            lambda2: 0.0,
            reduction: Reduction::Mean,
            weight_etd: false,
        }
    }

    pub fn student() -> Self {
        Self {
            lambda1: DEFAULT_LAMBDA1,
            lambda2: DEFAULT_LAMBDA2,
            reduction: Reduction::Mean,
            weight_etd: false,
        }
    }
}

/// Loss and its gradient with respect to the student output, for one example.
/// Teacher output and weights are constants.
pub(crate) fn objective_and_grad(
    v_s: &[f64],
    v_t: &[f32],
    v_teacher: Option<&[f32]>,
    w: Option<&[f32]>,
    spec: &LossSpec,
    grad: &mut [f64],
) -> (f64, f64, f64) {
    let s = spec.reduction.scale(v_s.len());
    let (mut fm, mut etd, mut pa) = (0.0, 0.0, 0.0);
    for i in 0..v_s.len() {
        let r = v_s[i] - v_t[i] as f64;
        fm += r * r;
        let mut g = 2.0 * r;
        if let Some(w) = w {
            let wi = w[i] as f64;
            pa += (wi * r).powi(2);
            g += spec.lambda2 * 2.0 * wi * wi * r;
        }
        if let Some(vt) = v_teacher {
            let d = v_s[i] - vt[i] as f64;
            let wi = match (spec.weight_etd, w) {
                (true, Some(w)) => w[i] as f64,
                _ => 1.0,
            };
            etd += (wi * d).powi(2);
            g += spec.lambda1 * 2.0 * wi * wi * d;
        }
        grad[i] = s * g;
    }
    (s * fm, s * etd, s * pa)
}
