use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{gaussian_noise, LatentTensor};

use super::model::{DenoiserParams, ModelInput};

/// Integrates `dz/dt = v(z, t)` from t = 1 to t = 0 with `steps` uniform
/// Euler steps.
pub fn euler_sample<F>(init: LatentTensor, steps: usize, mut velocity: F) -> Result<LatentTensor>
where
    F: FnMut(&LatentTensor, f64) -> Result<LatentTensor>,
{
    if steps == 0 {
        return Err(Error::Validation("sampler needs at least one step".into()));
    }
    let dt = 1.0 / steps as f64;
    let mut z = init;
    for k in 0..steps {
        let t = 1.0 - k as f64 * dt;
        let v = velocity(&z, t)?;
        z.ensure_same_shape(&v)?;
        let data: Vec<f32> = z
            .data()
            .iter()
            .zip(v.data())
            .map(|(&z, &v)| (z as f64 - dt * v as f64) as f32)
            .collect();
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical {
                step: k,
                reason: "sampler state is not finite".into(),
            });
        }
        z = LatentTensor::new(z.dims(), data)?;
    }
    Ok(z)
}

/// Draws a clean latent from the model given its conditioning.
pub fn sample(
    params: &DenoiserParams,
    cond: &LatentTensor,
    guidance: &LatentTensor,
    tag: usize,
    steps: usize,
    rng: &mut SeededRng,
) -> Result<LatentTensor> {
    let init = gaussian_noise(cond.dims(), rng)?;
    euler_sample(init, steps, |z, t| {
        params.forward(&ModelInput {
            cond,
            guidance,
            z_t: z,
            t,
            tag,
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Dims;

    #[test]
    fn exact_velocity_recovers_clean_latent() {
        let d = Dims::new(1, 2, 2, 16);
        let mut rng = SeededRng::new(4);
        let z0 = gaussian_noise(d, &mut rng).unwrap();
        let eps = gaussian_noise(d, &mut rng).unwrap();
        // Along the straight path the velocity is constant.
        let v = eps.zip_with(&z0, |e, z| e - z).unwrap();
        let out = euler_sample(eps, 7, |_, _| Ok(v.clone())).unwrap();
        for (a, b) in out.data().iter().zip(z0.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn zero_velocity_is_identity() {
        let d = Dims::new(1, 1, 1, 16);
        let init = LatentTensor::filled(d, 0.5).unwrap();
        let out = euler_sample(init.clone(), 3, |z, _| LatentTensor::zeros(z.dims())).unwrap();
        assert_eq!(out, init);
        assert!(euler_sample(init, 0, |z, _| LatentTensor::zeros(z.dims())).is_err());
    }

    #[test]
    fn timesteps_descend_from_one() {
        let d = Dims::new(1, 1, 1, 16);
        let mut seen = Vec::new();
        euler_sample(LatentTensor::zeros(d).unwrap(), 4, |z, t| {
            seen.push(t);
            LatentTensor::zeros(z.dims())
        })
        .unwrap();
        assert_eq!(seen, vec![1.0, 0.75, 0.5, 0.25]);
    }

    #[test]
    fn divergence_reports_step() {
        let d = Dims::new(1, 1, 1, 16);
        let init = LatentTensor::filled(d, -3e38).unwrap();
        let err = euler_sample(init, 5, |z, t| {
            let v = if t < 0.7 { 3e38 } else { 0.0 };
            LatentTensor::filled(z.dims(), v)
        })
        .unwrap_err();
        assert!(matches!(err, Error::Numerical { step: 2, .. }), "{err}");
    }
}
