//! Kernel hyperparameter updates by gradient ascent on a Monte Carlo
//! objective.
//!
//! The objective at hyperparameters `lambda = (v, l)` is
//! `-KL(q(u) || p(u)) + (pi - 1/2)^T mu + sum_n E_q[log psi(f_n)] - log Z`,
//! where `log Z` is the log-mean over prior draws of `sum_n log psi/phi`. Prior
//! draws use random Fourier features; all random numbers are shared between
//! the points of a finite-difference stencil so the gradient is smooth.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::MilDataset;
use crate::error::{Error, Result};
use crate::gsm::{log_phi, GsmDensity};
use crate::inference::{kl_to_prior, marginal_moments, KernelBlocks, VariationalState};
use crate::kernel::{KernelParams, NormMode};

/// Finite-difference step in log-parameter space.
pub const FD_STEP: f64 = 1e-4;

/// Largest change of the log-parameter vector in one ascent step.
pub const MAX_LOG_STEP: f64 = 0.5;

/// Spectral draws for random Fourier features, kept fixed for a training run.
///
/// Frequencies are stored in standardized form and rescaled by the current
/// lengthscale at use, so every `lambda` sees the same underlying draws.
#[derive(Debug, Clone)]
pub struct HyperoptWorkspace {
    /// R x D standard normal directions.
    directions: DMatrix<f64>,
    /// `|t_r|` with `t_r` standard normal; turns a Gaussian direction into a
    /// Cauchy frequency for the unsquared kernel.
    radial: Vec<f64>,
    mc_samples: usize,
}

impl HyperoptWorkspace {
    pub fn with_rng<R: Rng + ?Sized>(dim: usize, features: usize, mc_samples: usize, rng: &mut R) -> Result<Self> {
        if features == 0 {
            return Err(Error::invalid("rff_features", "must be >= 1"));
        }
        if mc_samples < 2 {
            return Err(Error::invalid("mc_samples", "must be >= 2"));
        }
        let directions = DMatrix::from_fn(features, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let radial = (0..features).map(|_| rng.sample::<f64, _>(StandardNormal).abs()).collect();
        Ok(Self {
            directions,
            radial,
            mc_samples,
        })
    }

    pub fn new(data: &MilDataset, config: &crate::inference::ModelConfig, _kernel: &KernelParams, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::with_rng(data.dim(), config.rff_features, config.mc_samples, &mut rng)
    }

    pub fn features(&self) -> usize {
        self.directions.nrows()
    }

    pub fn mc_samples(&self) -> usize {
        self.mc_samples
    }

    /// R x D frequency matrix for the given kernel.
    fn frequencies(&self, kernel: &KernelParams) -> DMatrix<f64> {
        let l = kernel.lengthscale();
        match kernel.norm_mode() {
            NormMode::Squared => &self.directions / l.sqrt(),
            NormMode::Unsquared => {
                let gamma = 1.0 / (2.0 * l);
                let mut w = self.directions.clone();
                for (r, mut row) in w.row_iter_mut().enumerate() {
                    row *= gamma / self.radial[r].max(f64::MIN_POSITIVE);
                }
                w
            }
        }
    }

    /// N x 2R feature map `sqrt(v/R) [cos(W x), sin(W x)]`.
    fn feature_map(&self, x: &DMatrix<f64>, kernel: &KernelParams) -> DMatrix<f64> {
        let r = self.features();
        let proj = x * self.frequencies(kernel).transpose();
        let scale = (kernel.variance() / r as f64).sqrt();
        DMatrix::from_fn(x.nrows(), 2 * r, |n, j| {
            if j < r {
                scale * proj[(n, j)].cos()
            } else {
                scale * proj[(n, j - r)].sin()
            }
        })
    }
}

/// `count` approximate draws from `N(0, K_XX)`, one per row (count x N).
pub fn rff_sample_prior_f<R: Rng + ?Sized>(
    ws: &HyperoptWorkspace,
    x: &DMatrix<f64>,
    kernel: &KernelParams,
    rng: &mut R,
    count: usize,
) -> Result<DMatrix<f64>> {
    if x.ncols() != ws.directions.ncols() {
        return Err(Error::DimensionMismatch {
            expected: ws.directions.ncols(),
            found: x.ncols(),
        });
    }
    let phi = ws.feature_map(x, kernel);
    let w = DMatrix::from_fn(2 * ws.features(), count, |_, _| rng.sample::<f64, _>(StandardNormal));
    Ok((phi * w).transpose())
}

fn log_mean_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let s: f64 = v.iter().map(|x| (x - max).exp()).sum();
    max + (s / v.len() as f64).ln()
}

/// Log normalizer of the `psi`-tilted prior, up to a constant that does not
/// depend on the kernel. Identically zero for the hyperbolic secant.
pub fn log_z_estimate<R: Rng + ?Sized>(
    ws: &HyperoptWorkspace,
    x: &DMatrix<f64>,
    kernel: &KernelParams,
    psi: &GsmDensity,
    rng: &mut R,
) -> Result<f64> {
    if matches!(psi, GsmDensity::HyperbolicSecant) {
        return Ok(0.0);
    }
    let f = rff_sample_prior_f(ws, x, kernel, rng, ws.mc_samples)?;
    let terms: Vec<f64> = f
        .row_iter()
        .map(|row| row.iter().map(|&v| psi.log_psi_unchecked(v) - log_phi(v)).sum())
        .collect();
    Ok(log_mean_exp(&terms))
}

/// Hyperparameter objective at `kernel`, holding `q(u)` and `pi` fixed.
/// Returns `-inf` when the kernel matrix cannot be factorized.
pub fn objective_j<R: Rng + ?Sized>(
    state: &VariationalState,
    data: &MilDataset,
    ws: &HyperoptWorkspace,
    kernel: &KernelParams,
    psi: &GsmDensity,
    rng: &mut R,
) -> Result<f64> {
    let blocks = match KernelBlocks::build(data.features(), &state.z, *kernel) {
        Ok(b) => b,
        Err(e) if e.is_numerical() => return Ok(f64::NEG_INFINITY),
        Err(e) => return Err(e),
    };
    let kl = match kl_to_prior(&blocks, &state.m, &state.s) {
        Ok(v) => v,
        Err(e) if e.is_numerical() => return Ok(f64::NEG_INFINITY),
        Err(e) => return Err(e),
    };
    let (mu, var) = marginal_moments(&blocks, &state.m, &state.s);
    let mut total = -kl;
    let k = ws.mc_samples as f64;
    for n in 0..mu.len() {
        total += (state.pi[n] - 0.5) * mu[n];
        let sd = var[n].sqrt();
        let mut acc = 0.0;
        for _ in 0..ws.mc_samples {
            let e: f64 = rng.sample(StandardNormal);
            acc += psi.log_psi_unchecked(mu[n] + sd * e);
        }
        total += acc / k;
    }
    total -= log_z_estimate(ws, data.features(), kernel, psi, rng)?;
    Ok(total)
}

fn evaluate_at(
    state: &VariationalState,
    data: &MilDataset,
    ws: &HyperoptWorkspace,
    log_params: [f64; 2],
    mode: NormMode,
    psi: &GsmDensity,
    seed: u64,
) -> Result<f64> {
    let Ok(kernel) = KernelParams::from_log_params(log_params, mode) else {
        return Ok(f64::NEG_INFINITY);
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    objective_j(state, data, ws, &kernel, psi, &mut rng)
}

/// Central-difference gradient of the objective in `(log v, log l)`, every
/// stencil point using the random stream of `seed`.
pub fn gradient(
    state: &VariationalState,
    data: &MilDataset,
    ws: &HyperoptWorkspace,
    kernel: &KernelParams,
    psi: &GsmDensity,
    seed: u64,
) -> Result<[f64; 2]> {
    let base = kernel.log_params();
    let mut g = [0.0; 2];
    for (k, gk) in g.iter_mut().enumerate() {
        let mut hi = base;
        let mut lo = base;
        hi[k] += FD_STEP;
        lo[k] -= FD_STEP;
        let jh = evaluate_at(state, data, ws, hi, kernel.norm_mode(), psi, seed)?;
        let jl = evaluate_at(state, data, ws, lo, kernel.norm_mode(), psi, seed)?;
        *gk = (jh - jl) / (2.0 * FD_STEP);
    }
    Ok(g)
}

/// `steps` iterations of gradient ascent in log-parameter space. Returns the
/// iterate with the largest objective (the input when nothing improves).
///
/// The gradient is taken of the objective divided by the number of
/// instances, so `rate` does not need to shrink with the dataset, and each
/// step is capped at [`MAX_LOG_STEP`] in Euclidean norm.
#[allow(clippy::too_many_arguments)]
pub fn optimize_hyperparams<R: Rng + ?Sized>(
    state: &VariationalState,
    data: &MilDataset,
    ws: &HyperoptWorkspace,
    kernel: &KernelParams,
    psi: &GsmDensity,
    steps: usize,
    rate: f64,
    rng: &mut R,
) -> Result<KernelParams> {
    if steps == 0 {
        return Err(Error::invalid("hyperopt_steps", "must be >= 1"));
    }
    let seed: u64 = rng.random();
    let mode = kernel.norm_mode();
    let mut current = kernel.log_params();
    let mut best = (evaluate_at(state, data, ws, current, mode, psi, seed)?, current);
    for _ in 0..steps {
        let Ok(k) = KernelParams::from_log_params(current, mode) else {
            break;
        };
        let g = gradient(state, data, ws, &k, psi, seed)?;
        if !(g[0].is_finite() && g[1].is_finite()) {
            break;
        }
        let scale = rate / data.n_instances() as f64;
        let mut step = [scale * g[0], scale * g[1]];
        let norm = step[0].hypot(step[1]);
        if norm > MAX_LOG_STEP {
            step = [step[0] * MAX_LOG_STEP / norm, step[1] * MAX_LOG_STEP / norm];
        }
        current = [current[0] + step[0], current[1] + step[1]];
        let j = evaluate_at(state, data, ws, current, mode, psi, seed)?;
        if j > best.0 {
            best = (j, current);
        }
    }
    if !best.0.is_finite() {
        log::warn!("hyperparameter objective not finite at any iterate; keeping v={}, l={}", kernel.variance(), kernel.lengthscale());
        return Ok(*kernel);
    }
    KernelParams::from_log_params(best.1, mode)
}
