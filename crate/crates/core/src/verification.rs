//! Executable checks of the model's mathematical identities.
//!
//! Each check returns a [`CheckResult`]; `verify` on the command line runs
//! [`run_all`]. The module also hosts [`JaakkolaReference`], an independent
//! implementation of the classical logistic-bound updates used to confirm
//! that the hyperbolic-secant augmentation reproduces them.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::{gen_synth, MilDataset, SynthConfig};
use crate::error::Result;
use crate::gsm::{
    gamma_log_range, jaakkola_lambda_unchecked, ln_gamma_pdf, log_jaakkola_bound, log_phi, log_sigmoid, pg_kl,
    sample_pg_1_0, sigmoid, GsmDensity,
};
use crate::inference::{
    elbo_augmented_with, init_state, sweep, update_theta, ModelConfig, OmegaTerms, VariationalState, PI_EPS,
};
use crate::kernel::{kernel_matrix, KernelParams, NormMode};
use crate::quadrature::integrate_positive;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub discrepancy: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl CheckResult {
    pub fn new(name: &str, discrepancy: f64, tolerance: f64, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed: discrepancy <= tolerance,
            discrepancy,
            tolerance,
            detail,
        }
    }

    fn failed(name: &str, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed: false,
            discrepancy: f64::INFINITY,
            tolerance: 0.0,
            detail,
        }
    }

    /// `PASS name discrepancy=.. tolerance=.. detail`.
    pub fn line(&self) -> String {
        format!(
            "{} {} discrepancy={:e} tolerance={:e} {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.discrepancy,
            self.tolerance,
            self.detail
        )
    }
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

/// The hyperbolic-secant `theta` is strictly decreasing, and so is the
/// auxiliary `r(s) = 2s + e^{-s} - e^s` negative for `s > 0`. The
/// discrepancy counts violating grid points.
pub fn check_theta_monotone() -> CheckResult {
    let hs = GsmDensity::HyperbolicSecant;
    let grid = log_grid(1e-4, 50.0, 2000);
    let theta: Vec<f64> = grid.iter().map(|&c| hs.theta_unchecked(c)).collect();
    let mut violations = 0usize;
    let mut smallest_drop = f64::INFINITY;
    for w in theta.windows(2) {
        let drop = w[0] - w[1];
        smallest_drop = smallest_drop.min(drop);
        if drop <= 0.0 {
            violations += 1;
        }
    }
    let mut max_r = f64::NEG_INFINITY;
    for &s in &log_grid(1e-3, 50.0, 2000) {
        let r = 2.0 * s + (-s).exp() - s.exp();
        max_r = max_r.max(r);
        if r >= 0.0 {
            violations += 1;
        }
    }
    CheckResult::new(
        "theta_monotone",
        violations as f64,
        0.0,
        format!("smallest consecutive drop {smallest_drop:e}, largest r(s) {max_r:e}"),
    )
}

/// Normalized mixture `int N(x | 0, 1/w) Gamma(w | alpha - 1/2, beta) dw`.
fn gamma_scale_mixture(x: f64, alpha: f64, beta: f64) -> Result<f64> {
    let shape = alpha - 0.5;
    let (lo, hi) = gamma_log_range(alpha, beta + 0.5 * x * x);
    let q = integrate_positive(
        |w| {
            if w <= 0.0 {
                return 0.0;
            }
            let log_normal = 0.5 * w.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * w * x * x;
            (log_normal + ln_gamma_pdf(w, shape, beta)).exp()
        },
        lo,
        hi,
        1e-14,
        1e-12,
    )?;
    Ok(q.value)
}

/// Largest relative spread of `mixture(x) / (beta + x^2/2)^{-alpha}` over
/// `x = 0.1, 0.2, ..., 5`.
pub fn gamma_ratio_spread(alpha: f64, beta: f64) -> Result<f64> {
    let ratios = (1..=50)
        .map(|i| {
            let x = 0.1 * i as f64;
            Ok(gamma_scale_mixture(x, alpha, beta)? * (beta + 0.5 * x * x).powf(alpha))
        })
        .collect::<Result<Vec<f64>>>()?;
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    Ok(ratios.iter().map(|r| ((r - mean) / mean).abs()).fold(0.0, f64::max))
}

/// Monte Carlo estimate of `(1/2) e^{x/2} E[exp(-x^2 w / 2)]`, `w ~ PG(1, 0)`,
/// with its standard error.
pub fn pg_logistic_estimate(draws: &[f64], x: f64) -> (f64, f64) {
    let n = draws.len() as f64;
    let pref = 0.5 * (0.5 * x).exp();
    let vals: Vec<f64> = draws.iter().map(|w| pref * (-0.5 * x * x * w).exp()).collect();
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Draws `count` PG(1, 0) samples with the default truncation.
pub fn pg_draws(count: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| sample_pg_1_0(&mut rng, 1000)).collect()
}

/// Both mixtures represent their targets: the Gamma mixture is proportional
/// to `(beta + x^2/2)^{-alpha}`, and the Pólya-Gamma expectation reproduces
/// the logistic function. The discrepancy is the worst of the two parts, each
/// scaled by its own tolerance (1e-6 relative, 3 standard errors).
pub fn check_gsm_representations() -> CheckResult {
    const NAME: &str = "gsm_representations";
    let mut worst_ratio: f64 = 0.0;
    for alpha in [1.0, 2.0] {
        for beta in [1.0, 4.0] {
            match gamma_ratio_spread(alpha, beta) {
                Ok(s) => worst_ratio = worst_ratio.max(s),
                Err(e) => return CheckResult::failed(NAME, format!("alpha={alpha} beta={beta}: {e}")),
            }
        }
    }
    let draws = pg_draws(100_000, 20);
    let mut worst_z: f64 = 0.0;
    for x in [0.5, 1.0, 2.0] {
        let (est, se) = pg_logistic_estimate(&draws, x);
        worst_z = worst_z.max((est - sigmoid(x)).abs() / se);
    }
    let (at_zero, _) = pg_logistic_estimate(&draws, 0.0);
    let exact_zero = if at_zero == 0.5 { 0.0 } else { f64::INFINITY };
    CheckResult::new(
        NAME,
        (worst_ratio / 1e-6).max(worst_z / 3.0).max(exact_zero),
        1.0,
        format!("gamma ratio spread {worst_ratio:e}, worst PG z-score {worst_z:.3}, x=0 value {at_zero}"),
    )
}

/// The Jaakkola bound equals the Pólya-Gamma augmented form pointwise and
/// never exceeds the exact log likelihood.
pub fn check_sg_gsm_pointwise(seed: u64) -> CheckResult {
    const NAME: &str = "sg_gsm_pointwise";
    let hs = GsmDensity::HyperbolicSecant;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut worst_excess = f64::NEG_INFINITY;
    for _ in 0..1000 {
        let y: u8 = rng.random_range(0..=1);
        let f: f64 = rng.random_range(-8.0..8.0);
        let xi: f64 = rng.random_range(1e-3..8.0);
        let bound = match log_jaakkola_bound(y, f, xi) {
            Ok(b) => b,
            Err(e) => return CheckResult::failed(NAME, e.to_string()),
        };
        let kl = pg_kl(xi).unwrap_or(f64::NAN);
        let gsm = -std::f64::consts::LN_2 + (f64::from(y) - 0.5) * f - 0.5 * hs.theta_unchecked(xi) * f * f - kl;
        worst = worst.max((bound - gsm).abs());
        let exact = log_sigmoid((2.0 * f64::from(y) - 1.0) * f);
        worst_excess = worst_excess.max(bound - exact);
    }
    let discrepancy = if worst_excess > 1e-12 { f64::INFINITY } else { worst };
    CheckResult::new(
        NAME,
        discrepancy,
        1e-10,
        format!("max |bound - gsm| {worst:e}, max(bound - loglik) {worst_excess:e}"),
    )
}

fn dense_inverse(a: &DMatrix<f64>) -> DMatrix<f64> {
    a.clone().lu().try_inverse().expect("invertible")
}

/// Marginals of `q(f)` with explicit inverses.
fn dense_moments(
    kzz: &DMatrix<f64>,
    kxz: &DMatrix<f64>,
    kxx_diag: f64,
    m: &DVector<f64>,
    s: &DMatrix<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let inv = dense_inverse(kzz);
    let p = kxz * &inv;
    let mu = &p * m;
    let q = &p * kxz.transpose();
    let ps = &p * s * p.transpose();
    let var = DVector::from_fn(mu.len(), |n, _| kxx_diag - q[(n, n)] + ps[(n, n)]);
    (mu, var)
}

fn dense_kl(kzz: &DMatrix<f64>, m: &DVector<f64>, s: &DMatrix<f64>) -> f64 {
    let inv = dense_inverse(kzz);
    let k = m.len() as f64;
    let ratio = (&inv * s).determinant();
    0.5 * ((&inv * s).trace() + m.dot(&(&inv * m)) - k - ratio.ln())
}

/// Evidence lower bound of the classical model with the Jaakkola bound at
/// anchors `xi`, assembled from dense matrices.
pub fn jaakkola_elbo(state: &VariationalState, data: &MilDataset, xi: &DVector<f64>, h: f64) -> f64 {
    let kernel = state.kernel();
    let kzz = state.blocks.kzz.reconstruct();
    let kxz = kernel_matrix(data.features(), &state.z, &kernel).expect("shapes");
    let (mu, var) = dense_moments(&kzz, &kxz, kernel.variance(), &state.m, &state.s);
    let mut total = -dense_kl(&kzz, &state.m, &state.s);
    for n in 0..mu.len() {
        let p = state.pi[n];
        let x = xi[n];
        let lam = jaakkola_lambda_unchecked(x);
        total += log_sigmoid(x) + 0.5 * ((2.0 * p - 1.0) * mu[n] - x) - lam * (mu[n] * mu[n] + var[n] - x * x);
        total -= p * p.ln() + (1.0 - p) * (1.0 - p).ln();
    }
    for (bag, &t) in data.bags().iter().zip(data.bag_labels()) {
        let p0: f64 = bag.iter().map(|&j| 1.0 - state.pi[j]).product();
        // log p(T | max) is linear in the indicator max = 1
        let g = if t == 1 { 1.0 - p0 } else { p0 };
        total += g * h.ln() - (h + 1.0).ln();
    }
    total
}

fn random_problem(seed: u64, bags: usize, bag_size: usize, dim: usize) -> MilDataset {
    gen_synth(&SynthConfig {
        num_bags: bags,
        bag_size,
        positives_per_positive_bag: (1, bag_size.min(3)),
        dim,
        separation: 2.0,
        positive_fraction: 0.5,
        seed,
    })
    .expect("valid synthetic config")
}

/// Randomizes `m`, `S` and `pi` of an initialized state.
fn scramble(state: &mut VariationalState, rng: &mut ChaCha8Rng) {
    let mdim = state.m.len();
    state.m = DVector::from_fn(mdim, |_, _| rng.random_range(-1.5..1.5));
    let a = DMatrix::from_fn(mdim, mdim, |_, _| rng.random_range(-0.5..0.5));
    state.s = &a * a.transpose() + DMatrix::identity(mdim, mdim) * 0.05;
    let n = state.pi.len();
    state.pi = DVector::from_fn(n, |_, _| rng.random_range(0.02..0.98));
}

/// Closed-form Jaakkola ELBO versus the augmented ELBO with Pólya-Gamma
/// `q(omega_n)` at tilt `xi_n`, on ten seeds, at both the optimal and random
/// anchors.
pub fn check_elbo_equality(seed: u64) -> CheckResult {
    const NAME: &str = "elbo_equality";
    let h = 100.0;
    let hs = GsmDensity::HyperbolicSecant;
    let mut worst: f64 = 0.0;
    for k in 0..10 {
        let s = seed.wrapping_add(k);
        let data = random_problem(s, 4, 5, 2);
        let cfg = ModelConfig {
            inducing: 4,
            ..ModelConfig::default()
        };
        let kernel = KernelParams::squared(0.8, 2.0).expect("valid kernel");
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let mut state = match init_state(&data, &cfg, kernel, &hs, &mut rng) {
            Ok(st) => st,
            Err(e) => return CheckResult::failed(NAME, e.to_string()),
        };
        scramble(&mut state, &mut rng);
        for random_xi in [false, true] {
            update_theta(&mut state, &hs);
            if random_xi {
                for n in 0..state.c.len() {
                    state.c[n] = rng.random_range(0.01..4.0);
                    state.theta_diag[n] = hs.theta_unchecked(state.c[n]);
                }
            }
            let gsm = match elbo_augmented_with(&state, &data, &hs, h, OmegaTerms::ClosedForm) {
                Ok(v) => v - data.n_instances() as f64 * std::f64::consts::LN_2,
                Err(e) => return CheckResult::failed(NAME, e.to_string()),
            };
            let sg = jaakkola_elbo(&state, &data, &state.c.clone(), h);
            worst = worst.max((gsm - sg).abs());
        }
    }
    CheckResult::new(NAME, worst, 1e-9, format!("10 seeds from {seed}, optimal and random anchors"))
}

/// `h(x) = lambda(x) (x^2 - a^2) + log phi(x)` peaks at `x = a`; the
/// discrepancy is the worst argmax offset in grid steps.
pub fn check_optimal_xi(seed: u64) -> CheckResult {
    let step = 1e-3;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let a: f64 = rng.random_range(0.1..5.0);
        let hfun = |x: f64| jaakkola_lambda_unchecked(x) * (x * x - a * a) + log_phi(x);
        let (mut best_x, mut best_h) = (step, f64::NEG_INFINITY);
        let mut x = step;
        while x <= 10.0 {
            let v = hfun(x);
            if v > best_h {
                best_h = v;
                best_x = x;
            }
            x += step;
        }
        worst = worst.max((best_x - a).abs() / step);
    }
    CheckResult::new("optimal_xi", worst, 1.0, format!("10 random anchors, grid step {step}"))
}

/// Classical variational updates with the Jaakkola bound, written with dense
/// inverses: `S = K (K + K_ZX Lambda K_XZ)^{-1} K`, `Lambda = 2 lambda(xi)`.
#[derive(Debug, Clone)]
pub struct JaakkolaReference {
    pub m: DVector<f64>,
    pub s: DMatrix<f64>,
    pub pi: DVector<f64>,
    pub xi: DVector<f64>,
    kzz: DMatrix<f64>,
    kxz: DMatrix<f64>,
    kxx_diag: f64,
}

impl JaakkolaReference {
    /// Starts from the same `Z`, `m`, `S`, `pi` and jittered `K_ZZ` as `state`.
    pub fn from_state(state: &VariationalState, data: &MilDataset) -> Result<Self> {
        let kernel = state.kernel();
        Ok(Self {
            m: state.m.clone(),
            s: state.s.clone(),
            pi: state.pi.clone(),
            xi: DVector::zeros(state.pi.len()),
            kzz: state.blocks.kzz.reconstruct(),
            kxz: kernel_matrix(data.features(), &state.z, &kernel)?,
            kxx_diag: kernel.variance(),
        })
    }

    pub fn sweep(&mut self, data: &MilDataset, h: f64) {
        let (mu, var) = dense_moments(&self.kzz, &self.kxz, self.kxx_diag, &self.m, &self.s);
        self.xi = DVector::from_fn(mu.len(), |n, _| (mu[n] * mu[n] + var[n].max(0.0)).sqrt());
        let lambda = DMatrix::from_diagonal(&self.xi.map(|x| 2.0 * jaakkola_lambda_unchecked(x)));
        let inner = &self.kzz + self.kxz.transpose() * lambda * &self.kxz;
        let s = &self.kzz * dense_inverse(&inner) * &self.kzz;
        self.s = (&s + s.transpose()) * 0.5;
        let resid = self.pi.map(|p| p - 0.5);
        self.m = &self.s * dense_inverse(&self.kzz) * self.kxz.transpose() * resid;

        let mu = &self.kxz * dense_inverse(&self.kzz) * &self.m;
        for n in 0..self.pi.len() {
            let b = data.bag_of(n);
            let others: f64 = data.bag(b).iter().filter(|&&j| j != n).map(|&j| 1.0 - self.pi[j]).product();
            let sign = if data.bag_labels()[b] == 1 { 1.0 } else { -1.0 };
            let p = sigmoid(mu[n] + h.ln() * sign * others);
            self.pi[n] = p.clamp(PI_EPS, 1.0 - PI_EPS);
        }
    }
}

/// Largest per-sweep deviation between the augmented trainer and the
/// reference on a seeded problem.
pub fn update_deviation(
    seed: u64,
    shape: (usize, usize, usize, usize),
    mode: NormMode,
    sweeps: usize,
) -> Result<f64> {
    let (bags, bag_size, inducing, dim) = shape;
    let data = random_problem(seed, bags, bag_size, dim);
    let hs = GsmDensity::HyperbolicSecant;
    let h = 100.0;
    let cfg = ModelConfig {
        inducing,
        ..ModelConfig::default()
    };
    let kernel = KernelParams::new(0.5, dim as f64, mode)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = init_state(&data, &cfg, kernel, &hs, &mut rng)?;
    let mut reference = JaakkolaReference::from_state(&state, &data)?;
    let dev = |st: &VariationalState, r: &JaakkolaReference| {
        let dm = (&st.m - &r.m).amax();
        let ds = (&st.s - &r.s).amax();
        let dp = (&st.pi - &r.pi).amax();
        dm.max(ds).max(dp)
    };
    let mut worst = dev(&state, &reference);
    for _ in 0..sweeps {
        sweep(&mut state, &data, &hs, h)?;
        reference.sweep(&data, h);
        worst = worst.max(dev(&state, &reference));
    }
    Ok(worst)
}

/// The hyperbolic-secant trainer and the Jaakkola reference follow the same
/// trajectory for 20 sweeps in both kernel norm modes.
pub fn check_update_equivalence(seed: u64) -> CheckResult {
    const NAME: &str = "update_equivalence";
    let mut worst: f64 = 0.0;
    for mode in [NormMode::Squared, NormMode::Unsquared] {
        match update_deviation(seed, (5, 6, 5, 3), mode, 20) {
            Ok(d) => worst = worst.max(d),
            Err(e) => return CheckResult::failed(NAME, format!("{mode:?}: {e}")),
        }
    }
    CheckResult::new(NAME, worst, 1e-8, "N=30, B=5, M=5, D=3, 20 sweeps, both norm modes".into())
}

/// Mean of the tilted mixing posterior by quadrature.
pub fn gamma_posterior_mean_quadrature(alpha: f64, beta: f64, c: f64) -> Result<f64> {
    let shape = alpha - 0.5;
    let (lo, hi) = gamma_log_range(alpha, beta + 0.5 * c * c);
    let weight = |w: f64| {
        if w <= 0.0 {
            return 0.0;
        }
        (0.5 * w.ln() - 0.5 * w * c * c + ln_gamma_pdf(w, shape, beta)).exp()
    };
    let num = integrate_positive(|w| w * weight(w), lo, hi, 1e-14, 1e-12)?;
    let den = integrate_positive(weight, lo, hi, 1e-14, 1e-12)?;
    Ok(num.value / den.value)
}

/// Posterior mean of the augmenting precision under the Gamma mixture equals
/// `theta`. Shapes `alpha <= 1/2` have no proper mixing density and are
/// skipped.
pub fn check_gamma_posterior() -> CheckResult {
    const NAME: &str = "gamma_posterior";
    let mut worst: f64 = 0.0;
    let mut skipped = 0;
    for alpha in [0.5, 1.0, 2.0, 3.0] {
        for beta in [1.0, 2.5, 4.0] {
            if alpha <= 0.5 {
                skipped += 1;
                continue;
            }
            let psi = GsmDensity::GammaMix { alpha, beta };
            for c in [0.0, 0.5, 1.3, 3.0, 10.0] {
                match gamma_posterior_mean_quadrature(alpha, beta, c) {
                    Ok(q) => worst = worst.max((q - psi.theta_unchecked(c)).abs()),
                    Err(e) => return CheckResult::failed(NAME, format!("alpha={alpha} beta={beta} c={c}: {e}")),
                }
            }
        }
    }
    let reference = gamma_posterior_mean_quadrature(1.0, 2.5, 1.3).unwrap_or(f64::NAN);
    worst = worst.max((reference - 0.298_954).abs());
    CheckResult::new(
        NAME,
        worst,
        1e-6,
        format!("alpha=1 beta=2.5 c=1.3 mean {reference:.9}; {skipped} grid cells with alpha=0.5 skipped"),
    )
}

/// Runs every check with fixed seeds.
pub fn run_all() -> Vec<CheckResult> {
    vec![
        check_theta_monotone(),
        check_gsm_representations(),
        check_sg_gsm_pointwise(1),
        check_elbo_equality(2),
        check_optimal_xi(3),
        check_update_equivalence(4),
        check_gamma_posterior(),
    ]
}
