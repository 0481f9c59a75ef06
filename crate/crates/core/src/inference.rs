//! Variational state and coordinate-ascent training.
//!
//! One epoch updates, in order, the augmentation scales `c` and `Theta`, the
//! inducing posterior `q(u) = N(m, S)`, the instance probabilities `pi`, and
//! optionally the kernel hyperparameters. Every update is the exact optimum of
//! the augmented ELBO in its block, so [`elbo_augmented`] never decreases
//! while the kernel is held fixed.
//!
//! Linear algebra is carried in whitened coordinates: with `K_ZZ = L L^T`,
//! `V = L^{-1} K_ZX` and `W = L^{-1} S L^{-T}`, the `q(f)` marginals are
//! `mu = V^T L^{-1} m` and `var = diag(K~) + diag(V^T W V)`.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::MilDataset;
use crate::error::{Error, Result};
use crate::gsm::{sigmoid, GsmDensity};
use crate::kernel::{self, factorize_psd, KernelParams, PsdFactor};
use crate::metrics;
use crate::model::{Monitor, TrainedModel, TrainingMetadata};
use crate::predict;
use crate::hyperopt::{self, HyperoptWorkspace};

/// Clamp applied to instance probabilities.
pub const PI_EPS: f64 = 1e-12;

/// Training configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Bag-noise odds `H`.
    pub h: f64,
    /// Number of inducing points `M`.
    pub inducing: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Predictive samples `L` for validation scoring.
    pub samples: usize,
    /// Random Fourier features for the log-normalizer.
    pub rff_features: usize,
    /// Monte Carlo samples inside the hyperparameter objective.
    pub mc_samples: usize,
    pub hyperopt_steps: usize,
    pub hyperopt_rate: f64,
    pub hyperopt: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            h: 100.0,
            inducing: 50,
            max_epochs: 200,
            patience: 10,
            samples: 1000,
            rff_features: 100,
            mc_samples: 64,
            hyperopt_steps: 10,
            hyperopt_rate: 1e-2,
            hyperopt: false,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.h.is_finite() && self.h > 0.0) {
            return Err(Error::invalid("H", format!("must be finite and > 0, got {}", self.h)));
        }
        let counts = [
            ("inducing", self.inducing),
            ("max_epochs", self.max_epochs),
            ("patience", self.patience),
            ("samples", self.samples),
            ("rff_features", self.rff_features),
            ("mc_samples", self.mc_samples),
            ("hyperopt_steps", self.hyperopt_steps),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::invalid(name, "must be >= 1"));
            }
        }
        if self.samples < 2 {
            return Err(Error::invalid("samples", "must be >= 2"));
        }
        if self.mc_samples < 2 {
            return Err(Error::invalid("mc_samples", "must be >= 2"));
        }
        if !(self.hyperopt_rate.is_finite() && self.hyperopt_rate >= 0.0) {
            return Err(Error::invalid("hyperopt_rate", "must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Kernel matrices and factors derived from `(X, Z, lambda)`.
#[derive(Debug, Clone)]
pub struct KernelBlocks {
    pub kernel: KernelParams,
    pub kzz: PsdFactor,
    pub kxz: DMatrix<f64>,
    /// `L^{-1} K_ZX`, M x N.
    pub whitened: DMatrix<f64>,
    /// FITC conditional variances `diag(K_XX - Q_XX)`.
    pub cond_var: DVector<f64>,
}

impl KernelBlocks {
    pub fn build(x: &DMatrix<f64>, z: &DMatrix<f64>, kernel: KernelParams) -> Result<Self> {
        let kzz = factorize_psd(&kernel::kernel_matrix_sym(z, &kernel))?;
        let kxz = kernel::kernel_matrix(x, z, &kernel)?;
        let fitc = kernel::fitc_conditional(&kxz, &kzz, &kernel::kernel_diag(x, &kernel))?;
        Ok(Self {
            kernel,
            kzz,
            kxz,
            whitened: fitc.whitened,
            cond_var: fitc.cond_var,
        })
    }

    pub fn n_inducing(&self) -> usize {
        self.kzz.dim()
    }
}

/// `L^{-1} S L^{-T}`.
pub fn whiten_cov(kzz: &PsdFactor, s: &DMatrix<f64>) -> DMatrix<f64> {
    let a = kzz.solve_lower(s);
    let w = kzz.solve_lower(&a.transpose());
    (&w + w.transpose()) * 0.5
}

/// Marginal means and variances of `q(f_n)` for given `q(u)`.
pub fn marginal_moments(blocks: &KernelBlocks, m: &DVector<f64>, s: &DMatrix<f64>) -> (DVector<f64>, DVector<f64>) {
    let mw = blocks.kzz.solve_lower_vec(m);
    let mu = blocks.whitened.tr_mul(&mw);
    let w = whiten_cov(&blocks.kzz, s);
    let wv = &w * &blocks.whitened;
    let var = DVector::from_fn(mu.len(), |n, _| {
        let q = blocks.whitened.column(n).dot(&wv.column(n));
        (blocks.cond_var[n] + q).max(0.0)
    });
    (mu, var)
}

/// `KL(N(m, S) || N(0, K_ZZ))`.
pub fn kl_to_prior(blocks: &KernelBlocks, m: &DVector<f64>, s: &DMatrix<f64>) -> Result<f64> {
    let w = whiten_cov(&blocks.kzz, s);
    let mw = blocks.kzz.solve_lower_vec(m);
    let log_det_w = match w.clone().cholesky() {
        Some(c) => 2.0 * c.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>(),
        None => factorize_psd(&w)?.log_det(),
    };
    let mdim = m.len() as f64;
    Ok(0.5 * (w.trace() + mw.norm_squared() - mdim - log_det_w))
}

/// Mutable training state.
#[derive(Debug, Clone)]
pub struct VariationalState {
    /// Inducing locations, M x D.
    pub z: DMatrix<f64>,
    pub m: DVector<f64>,
    pub s: DMatrix<f64>,
    pub pi: DVector<f64>,
    pub c: DVector<f64>,
    pub theta_diag: DVector<f64>,
    pub blocks: KernelBlocks,
}

impl VariationalState {
    pub fn kernel(&self) -> KernelParams {
        self.blocks.kernel
    }

    /// Rebuilds the kernel blocks for new hyperparameters; `Z`, `m`, `S` and
    /// `pi` are kept.
    pub fn refresh_kernel(&mut self, x: &DMatrix<f64>, kernel: KernelParams) -> Result<()> {
        self.blocks = KernelBlocks::build(x, &self.z, kernel)?;
        Ok(())
    }
}

/// Random initialization: `Z` is `M` distinct training instances, `m` has
/// standard-normal entries, `S = I`, `pi ~ Uniform(0, 1)`.
pub fn init_state<R: Rng + ?Sized>(
    data: &MilDataset,
    config: &ModelConfig,
    kernel: KernelParams,
    psi: &GsmDensity,
    rng: &mut R,
) -> Result<VariationalState> {
    let n = data.n_instances();
    let mdim = config.inducing;
    if mdim == 0 || mdim > n {
        return Err(Error::invalid(
            "inducing",
            format!("must lie in 1..={n} (number of instances), got {mdim}"),
        ));
    }
    let picks = index::sample(rng, n, mdim).into_vec();
    let z = data.features().select_rows(picks.iter());
    let m = DVector::from_fn(mdim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let s = DMatrix::identity(mdim, mdim);
    let pi = DVector::from_fn(n, |_, _| rng.random::<f64>().clamp(PI_EPS, 1.0 - PI_EPS));
    let blocks = KernelBlocks::build(data.features(), &z, kernel)?;
    let mut state = VariationalState {
        z,
        m,
        s,
        pi,
        c: DVector::zeros(n),
        theta_diag: DVector::zeros(n),
        blocks,
    };
    update_theta(&mut state, psi);
    Ok(state)
}

pub fn q_f_moments(state: &VariationalState) -> (DVector<f64>, DVector<f64>) {
    marginal_moments(&state.blocks, &state.m, &state.s)
}

/// `E[max_{j in bag, j != n} y_j] = 1 - prod (1 - pi_j)`, with the product
/// accumulated in log space. `excluded = None` keeps the whole bag.
pub fn expected_bag_max_excluding(pi: &[f64], bag: &[usize], excluded: Option<usize>) -> f64 {
    let log_p0: f64 = bag
        .iter()
        .filter(|&&j| Some(j) != excluded)
        .map(|&j| (-pi[j]).ln_1p())
        .sum();
    (-log_p0.exp_m1()).clamp(0.0, 1.0)
}

/// Sequential sweep over instances in index order; each update sees the
/// freshest probabilities of its bag mates.
pub fn update_pi(state: &mut VariationalState, data: &MilDataset, h: f64) {
    let (mu, _) = q_f_moments(state);
    let log_h = h.ln();
    let pi = state.pi.as_mut_slice();
    for n in 0..pi.len() {
        let b = data.bag_of(n);
        let sign = 2.0 * f64::from(data.bag_labels()[b]) - 1.0;
        let emax = expected_bag_max_excluding(pi, data.bag(b), Some(n));
        let logit = mu[n] + log_h * sign * (1.0 - emax);
        pi[n] = sigmoid(logit).clamp(PI_EPS, 1.0 - PI_EPS);
    }
}

/// `S = (K^{-1} K_ZX Theta K_XZ K^{-1} + K^{-1})^{-1}` and
/// `m = S K^{-1} K_ZX (pi - 1/2)`, computed as `S = L B^{-1} L^T` with
/// `B = I + V Theta V^T`.
pub fn update_qu(state: &mut VariationalState) -> Result<()> {
    let v = &state.blocks.whitened;
    let mdim = v.nrows();
    let mut vt = v.clone();
    for (n, mut col) in vt.column_iter_mut().enumerate() {
        col *= state.theta_diag[n];
    }
    let mut b = &vt * v.transpose();
    for i in 0..mdim {
        b[(i, i)] += 1.0;
    }
    let b = (&b + b.transpose()) * 0.5;
    let b_lower = match b.clone().cholesky() {
        Some(c) => c.unpack(),
        None => factorize_psd(&b)?.lower().clone(),
    };
    let l = state.blocks.kzz.lower();
    // R = L_B^{-1} L^T, S = R^T R.
    let r = b_lower
        .solve_lower_triangular(&l.transpose())
        .expect("positive diagonal");
    let s = r.tr_mul(&r);
    state.s = (&s + s.transpose()) * 0.5;

    let resid = state.pi.map(|p| p - 0.5);
    let rhs = v * resid;
    let y = b_lower.solve_lower_triangular(&rhs).expect("positive diagonal");
    let y = b_lower.tr_solve_lower_triangular(&y).expect("positive diagonal");
    state.m = l * y;
    if state.m.iter().any(|x| !x.is_finite()) {
        return Err(Error::Factorization {
            max_jitter: state.blocks.kzz.jitter(),
            mean_diag: state.blocks.kernel.variance(),
        });
    }
    Ok(())
}

/// `c_n = sqrt(E[f_n^2])` and `Theta_nn = theta(c_n)`.
pub fn update_theta(state: &mut VariationalState, psi: &GsmDensity) {
    let (mu, var) = q_f_moments(state);
    for n in 0..mu.len() {
        let c = (mu[n] * mu[n] + var[n]).sqrt();
        state.c[n] = c;
        state.theta_diag[n] = psi.theta_unchecked(c);
    }
}

/// One epoch of the variational updates at fixed kernel hyperparameters.
pub fn sweep(state: &mut VariationalState, data: &MilDataset, psi: &GsmDensity, h: f64) -> Result<()> {
    update_theta(state, psi);
    update_qu(state)?;
    update_pi(state, data, h);
    Ok(())
}

fn bernoulli_entropy(p: f64) -> f64 {
    let mut e = 0.0;
    if p > 0.0 {
        e -= p * p.ln();
    }
    if p < 1.0 {
        e -= (1.0 - p) * (-p).ln_1p();
    }
    e
}

/// Expected log bag likelihood summed over bags.
pub fn bag_likelihood_term(pi: &[f64], data: &MilDataset, h: f64) -> f64 {
    let log_h = h.ln();
    let log_h1 = (h + 1.0).ln();
    data.bags()
        .iter()
        .zip(data.bag_labels())
        .map(|(bag, &t)| {
            let emax = expected_bag_max_excluding(pi, bag, None);
            let p0 = 1.0 - emax;
            let g = if t == 1 { emax } else { p0 };
            log_h * g - log_h1
        })
        .sum()
}

/// How the `omega` terms of the ELBO are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OmegaTerms {
    ClosedForm,
    /// Per-instance adaptive quadrature for `GammaMix` (needs `alpha > 1/2`).
    Quadrature,
}

/// Augmented ELBO up to a constant independent of the kernel and of the
/// variational parameters, with the `omega` terms assembled by quadrature for
/// `GammaMix` and in closed form for the hyperbolic secant.
pub fn elbo_augmented(state: &VariationalState, data: &MilDataset, psi: &GsmDensity, h: f64) -> Result<f64> {
    let mode = match psi {
        GsmDensity::GammaMix { alpha, .. } if *alpha > 0.5 => OmegaTerms::Quadrature,
        _ => OmegaTerms::ClosedForm,
    };
    elbo_augmented_with(state, data, psi, h, mode)
}

pub fn elbo_augmented_with(
    state: &VariationalState,
    data: &MilDataset,
    psi: &GsmDensity,
    h: f64,
    omega: OmegaTerms,
) -> Result<f64> {
    let (mu, var) = q_f_moments(state);
    let mut total = -kl_to_prior(&state.blocks, &state.m, &state.s)?;
    for n in 0..mu.len() {
        let p = state.pi[n];
        let c = state.c[n];
        let omega_term = match omega {
            OmegaTerms::ClosedForm => psi.omega_elbo_term(c),
            OmegaTerms::Quadrature => psi.omega_elbo_term_quadrature(c)?,
        };
        total += (p - 0.5) * mu[n] - 0.5 * state.theta_diag[n] * (mu[n] * mu[n] + var[n])
            + bernoulli_entropy(p)
            + omega_term;
    }
    total += bag_likelihood_term(state.pi.as_slice(), data, h);
    Ok(total)
}

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub elbo: f64,
    /// Validation (or training) bag AUC; `None` when undefined.
    pub val_bag_auc: Option<f64>,
    pub kernel: KernelParams,
}

impl EpochRecord {
    /// `epoch=<k> elbo=<v> val_bag_auc=<v>`.
    pub fn log_line(&self) -> String {
        let auc = match self.val_bag_auc {
            Some(a) => format!("{a}"),
            None => "nan".to_string(),
        };
        format!("epoch={} elbo={} val_bag_auc={}", self.epoch, self.elbo, auc)
    }
}

pub(crate) fn snapshot(
    state: &VariationalState,
    psi: &GsmDensity,
    config: &ModelConfig,
    dim: usize,
    metadata: TrainingMetadata,
) -> Result<TrainedModel> {
    TrainedModel::new(
        state.z.clone(),
        state.m.clone(),
        state.s.clone(),
        state.kernel(),
        *psi,
        config.h,
        dim,
        metadata,
    )
}

pub(crate) fn validation_bag_auc(model: &TrainedModel, data: &MilDataset, samples: usize, seed: u64) -> Result<Option<f64>> {
    let (neg, pos) = data.class_counts();
    if neg == 0 || pos == 0 {
        return Ok(None);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scores = Vec::with_capacity(data.n_bags());
    for b in 0..data.n_bags() {
        let bp = predict::bag_predict(model, &data.bag_features(b), samples, &mut rng)?;
        scores.push(bp.mean);
    }
    let labels: Vec<u8> = data.bag_labels().to_vec();
    Ok(Some(metrics::auc(&scores, &labels)?))
}

/// Trains a model with early stopping on bag AUC.
pub fn train(
    data: &MilDataset,
    val: Option<&MilDataset>,
    config: &ModelConfig,
    kernel_init: KernelParams,
    psi: &GsmDensity,
) -> Result<TrainedModel> {
    train_logged(data, val, config, kernel_init, psi, &mut |_| {})
}

/// [`train`] with a callback invoked after every epoch.
pub fn train_logged(
    data: &MilDataset,
    val: Option<&MilDataset>,
    config: &ModelConfig,
    kernel_init: KernelParams,
    psi: &GsmDensity,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainedModel> {
    config.validate()?;
    psi.validate()?;
    if let Some(v) = val {
        if v.dim() != data.dim() {
            return Err(Error::DimensionMismatch {
                expected: data.dim(),
                found: v.dim(),
            });
        }
    }
    let monitor_set = val.unwrap_or(data);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = init_state(data, config, kernel_init, psi, &mut rng)?;
    let mut hyper_rng = ChaCha8Rng::seed_from_u64(rng.random());
    let workspace = if config.hyperopt {
        Some(HyperoptWorkspace::new(data, config, &kernel_init, hyper_rng.random())?)
    } else {
        None
    };
    let eval_seed = config.seed ^ 0x5eed_5eed_5eed_5eed;

    let (neg, pos) = monitor_set.class_counts();
    let monitor = if neg > 0 && pos > 0 {
        if val.is_some() {
            Monitor::ValBagAuc
        } else {
            Monitor::TrainBagAuc
        }
    } else {
        log::warn!("monitoring set has a single bag class; bag AUC undefined, monitoring the ELBO instead");
        Monitor::Elbo
    };

    let mut best: Option<(f64, usize, TrainedModel)> = None;
    let mut since_best = 0;
    let mut epochs_run = 0;
    for epoch in 1..=config.max_epochs {
        sweep(&mut state, data, psi, config.h)?;
        if let Some(ws) = workspace.as_ref() {
            let kernel = hyperopt::optimize_hyperparams(
                &state,
                data,
                ws,
                &state.kernel(),
                psi,
                config.hyperopt_steps,
                config.hyperopt_rate,
                &mut hyper_rng,
            )?;
            state.refresh_kernel(data.features(), kernel)?;
        }
        epochs_run = epoch;
        let elbo = elbo_augmented_with(&state, data, psi, config.h, OmegaTerms::ClosedForm)?;
        let meta = TrainingMetadata {
            epochs_run: epoch,
            best_epoch: epoch,
            monitor,
            best_score: f64::NAN,
            seed: config.seed,
        };
        let candidate = snapshot(&state, psi, config, data.dim(), meta)?;
        let auc = match monitor {
            Monitor::Elbo => None,
            _ => validation_bag_auc(&candidate, monitor_set, config.samples, eval_seed)?,
        };
        let record = EpochRecord {
            epoch,
            elbo,
            val_bag_auc: auc,
            kernel: state.kernel(),
        };
        log::info!("{}", record.log_line());
        on_epoch(&record);
        let score = auc.unwrap_or(elbo);
        let improved = best.as_ref().is_none_or(|(s, _, _)| score > *s);
        if improved {
            best = Some((score, epoch, candidate));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    let (score, best_epoch, model) = best.ok_or_else(|| Error::Dataset("no epochs were run".into()))?;
    Ok(model.with_metadata(TrainingMetadata {
        epochs_run,
        best_epoch,
        monitor,
        best_score: score,
        seed: config.seed,
    }))
}
