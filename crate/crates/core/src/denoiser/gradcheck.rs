use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::latent::weight_map;
use crate::losses::{LossSpec, StopGrad};
use crate::rng::SeededRng;
use crate::tensor::{gaussian_noise, Dims, LatentTensor};

use super::model::{backward, batch_loss, ArchConfig, DenoiserParams, Example};

/// Central differences of `f` around `theta`.
pub fn finite_difference<F>(theta: &[f64], h: f64, mut f: F) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut x = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a - n| / max(|a|, |n|, floor)`; the floor keeps near-zero entries from
/// dominating.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub params: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub worst_group: String,
}

pub const GRADCHECK_TOLERANCE: f64 = 1e-3;
const FD_STEP: f64 = 1e-3;
const REL_FLOOR: f64 = 1e-6;

/// Compares analytic and numeric gradients of the batch objective.
pub fn check_gradients(params: &DenoiserParams, batch: &[Example], spec: &LossSpec) -> Result<GradCheckReport> {
    let (_, analytic) = backward(params, batch, spec)?;
    let mut probe = params.clone();
    let numeric = finite_difference(params.values(), FD_STEP, |theta| {
        probe.values_mut().copy_from_slice(theta);
        batch_loss(&probe, batch, spec).map(|l| l.total).unwrap_or(f64::NAN)
    });
    let (mut worst, mut worst_index) = (0.0, 0);
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        let e = relative_error(*a, *n, REL_FLOOR);
        if !(e <= worst) {
            worst = e;
            worst_index = i;
        }
    }
    let worst_group = params
        .layout()
        .groups
        .iter()
        .find(|g| (g.offset..g.offset + g.len).contains(&worst_index))
        .map(|g| g.name.clone())
        .unwrap_or_default();
    Ok(GradCheckReport {
        params: params.len(),
        max_rel_error: worst,
        worst_index,
        worst_group,
    })
}

pub fn tiny_arch() -> ArchConfig {
    ArchConfig {
        width: 3,
        hidden_layers: 2,
        num_tags: 2,
    }
}

/// Random tiny network and a two-example batch exercising every loss term.
pub fn tiny_problem(seed: u64) -> Result<(DenoiserParams, Vec<Example>)> {
    let rng = SeededRng::new(seed);
    let mut init = rng.substream("gradcheck-init");
    let mut params = DenoiserParams::init(tiny_arch(), &mut init)?;
    // Nonzero biases so their gradients are exercised away from zero.
    for v in params.values_mut() {
        if *v == 0.0 {
            *v = 0.05;
        }
    }
    let mut data = rng.substream("gradcheck-data");
    let d = Dims::new(2, 3, 3, 16);
    let batch = (0..2)
        .map(|i| -> Result<Example> {
            let raw = gaussian_noise(d, &mut data)?;
            let w = LatentTensor::new(d, raw.data().iter().map(|v| 0.5 + 0.4 * v.tanh()).collect())?;
            Ok(Example {
                cond: gaussian_noise(d, &mut data)?,
                guidance: gaussian_noise(d, &mut data)?,
                z_t: gaussian_noise(d, &mut data)?,
                t: 0.3 + 0.4 * i as f64,
                tag: i % 2,
                target: gaussian_noise(d, &mut data)?,
                teacher: Some(StopGrad::new(gaussian_noise(d, &mut data)?)),
                weights: Some(weight_map(&w)?),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((params, batch))
}

/// Gradient check on the tiny problem under the full student objective.
pub fn run_gradcheck(seed: u64) -> Result<GradCheckReport> {
    let (params, batch) = tiny_problem(seed)?;
    check_gradients(&params, &batch, &LossSpec::student())
}
