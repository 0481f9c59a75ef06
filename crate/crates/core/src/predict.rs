//! Predictive distributions for new instances and bags.
//!
//! Features passed here are in model space; use
//! [`TrainedModel::transform_features`] first when the model carries a PCA
//! projection.

use nalgebra::{DMatrix, DVectorView};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gsm::sigmoid;
use crate::kernel::kernel_vector;
use crate::model::TrainedModel;

pub const DEFAULT_SAMPLES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InstancePrediction {
    pub mean: f64,
    pub std: f64,
    pub latent_mean: f64,
    pub latent_var: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BagPrediction {
    pub mean: f64,
    pub std: f64,
    pub instances: Vec<InstancePrediction>,
}

/// Mean and variance of `q(f*)` at a single input.
pub fn latent_predictive(model: &TrainedModel, x: DVectorView<'_, f64>) -> Result<(f64, f64)> {
    if x.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: x.len(),
        });
    }
    let kernel = model.kernel();
    let kzx = kernel_vector(x, model.inducing_points(), kernel)?;
    let mean = kzx.dot(model.weights());
    let a = model.kzz().solve_lower_vec(&kzx);
    let var = kernel.variance() - a.norm_squared() + a.dot(&(model.whitened_cov() * &a));
    Ok((mean, var.max(0.0)))
}

fn check_samples(samples: usize) -> Result<()> {
    if samples < 2 {
        return Err(Error::invalid("samples", format!("must be >= 2, got {samples}")));
    }
    Ok(())
}

fn draw<R: Rng + ?Sized>(mean: f64, var: f64, samples: usize, rng: &mut R) -> Vec<f64> {
    let sd = var.sqrt();
    (0..samples)
        .map(|_| {
            let e: f64 = rng.sample(StandardNormal);
            sigmoid(mean + sd * e)
        })
        .collect()
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / n;
    (mean.clamp(0.0, 1.0), var.sqrt())
}

fn summarize(latent: (f64, f64), probs: &[f64]) -> InstancePrediction {
    let (mean, std) = mean_std(probs);
    InstancePrediction {
        mean,
        std,
        latent_mean: latent.0,
        latent_var: latent.1,
    }
}

pub fn instance_predict<R: Rng + ?Sized>(
    model: &TrainedModel,
    x: DVectorView<'_, f64>,
    samples: usize,
    rng: &mut R,
) -> Result<InstancePrediction> {
    check_samples(samples)?;
    let latent = latent_predictive(model, x)?;
    Ok(summarize(latent, &draw(latent.0, latent.1, samples, rng)))
}

/// Bag prediction from per-instance latent `(mean, variance)` pairs.
///
/// Sample `l` of every instance enters sample `l` of the bag probability
/// `1 - prod_n (1 - p_n)`, so the bag mean dominates every instance mean.
pub fn bag_predict_from_latents<R: Rng + ?Sized>(
    latents: &[(f64, f64)],
    samples: usize,
    rng: &mut R,
) -> Result<BagPrediction> {
    check_samples(samples)?;
    if latents.is_empty() {
        return Err(Error::Dataset("cannot predict an empty bag".into()));
    }
    let mut log_none = vec![0.0; samples];
    let mut instances = Vec::with_capacity(latents.len());
    for &(mean, var) in latents {
        let probs = draw(mean, var, samples, rng);
        for (acc, p) in log_none.iter_mut().zip(&probs) {
            *acc += (-p).ln_1p();
        }
        instances.push(summarize((mean, var), &probs));
    }
    let bag: Vec<f64> = log_none.iter().map(|l| -l.exp_m1()).collect();
    let (mean, std) = mean_std(&bag);
    Ok(BagPrediction { mean, std, instances })
}

/// `x` holds the bag's instances as rows.
pub fn bag_predict<R: Rng + ?Sized>(
    model: &TrainedModel,
    x: &DMatrix<f64>,
    samples: usize,
    rng: &mut R,
) -> Result<BagPrediction> {
    if x.ncols() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: x.ncols(),
        });
    }
    let latents = x
        .row_iter()
        .map(|r| latent_predictive(model, r.transpose().as_view()))
        .collect::<Result<Vec<_>>>()?;
    bag_predict_from_latents(&latents, samples, rng)
}
