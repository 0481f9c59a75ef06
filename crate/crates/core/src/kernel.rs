//! RBF kernel evaluation, Gram-matrix assembly and jittered Cholesky factors.
//!
//! Every solve against a kernel matrix goes through a [`PsdFactor`]; no
//! explicit inverse is ever formed.

use nalgebra::{DMatrix, DVector, DVectorView};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which power of the Euclidean distance enters the exponent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormMode {
    /// `exp(-|x - x'|^2 / (2 l))`, the squared exponential.
    #[default]
    Squared,
    /// `exp(-|x - x'| / (2 l))`, an exponential (Laplace-type) kernel.
    Unsquared,
}

/// RBF hyperparameters: signal variance `v` and lengthscale `l`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    v: f64,
    l: f64,
    #[serde(default)]
    norm_mode: NormMode,
}

impl KernelParams {
    pub fn new(v: f64, l: f64, norm_mode: NormMode) -> Result<Self> {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::invalid("v", format!("must be finite and > 0, got {v}")));
        }
        if !(l.is_finite() && l > 0.0) {
            return Err(Error::invalid("l", format!("must be finite and > 0, got {l}")));
        }
        Ok(Self { v, l, norm_mode })
    }

    /// Squared-norm kernel, the default.
    pub fn squared(v: f64, l: f64) -> Result<Self> {
        Self::new(v, l, NormMode::Squared)
    }

    pub fn variance(&self) -> f64 {
        self.v
    }

    pub fn lengthscale(&self) -> f64 {
        self.l
    }

    pub fn norm_mode(&self) -> NormMode {
        self.norm_mode
    }

    /// `(log v, log l)`, the coordinates the hyperparameter optimizer works in.
    pub fn log_params(&self) -> [f64; 2] {
        [self.v.ln(), self.l.ln()]
    }

    pub fn from_log_params(log_params: [f64; 2], norm_mode: NormMode) -> Result<Self> {
        Self::new(log_params[0].exp(), log_params[1].exp(), norm_mode)
    }

    #[inline]
    fn eval_sq_dist(&self, sq_dist: f64) -> f64 {
        let d = match self.norm_mode {
            NormMode::Squared => sq_dist,
            NormMode::Unsquared => sq_dist.sqrt(),
        };
        self.v * (-d / (2.0 * self.l)).exp()
    }
}

/// Kernel value between two feature vectors.
pub fn rbf(x: &[f64], x2: &[f64], p: &KernelParams) -> Result<f64> {
    if x.len() != x2.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: x2.len(),
        });
    }
    let sq: f64 = x.iter().zip(x2).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(p.eval_sq_dist(sq))
}

#[inline]
fn row_sq_dist(a: &DMatrix<f64>, i: usize, b: &DMatrix<f64>, j: usize) -> f64 {
    let mut acc = 0.0;
    for k in 0..a.ncols() {
        let d = a[(i, k)] - b[(j, k)];
        acc += d * d;
    }
    acc
}

/// Gram matrix between the rows of `a` (n x D) and the rows of `b` (m x D).
pub fn kernel_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>, p: &KernelParams) -> Result<DMatrix<f64>> {
    if a.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch {
            expected: a.ncols(),
            found: b.ncols(),
        });
    }
    if std::ptr::eq(a, b) {
        return Ok(kernel_matrix_sym(a, p));
    }
    Ok(DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| {
        p.eval_sq_dist(row_sq_dist(a, i, b, j))
    }))
}

/// Symmetric Gram matrix of the rows of `a`; the upper triangle is mirrored
/// so the result equals its transpose bit for bit.
pub fn kernel_matrix_sym(a: &DMatrix<f64>, p: &KernelParams) -> DMatrix<f64> {
    let n = a.nrows();
    let mut k = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..=j {
            let val = p.eval_sq_dist(row_sq_dist(a, i, a, j));
            k[(i, j)] = val;
            k[(j, i)] = val;
        }
    }
    k
}

/// Kernel diagonal of `a` against itself; every entry equals `v`.
pub fn kernel_diag(a: &DMatrix<f64>, p: &KernelParams) -> DVector<f64> {
    DVector::from_element(a.nrows(), p.variance())
}

/// Kernel vector between one point and the rows of `b`.
pub fn kernel_vector(x: DVectorView<'_, f64>, b: &DMatrix<f64>, p: &KernelParams) -> Result<DVector<f64>> {
    if x.len() != b.ncols() {
        return Err(Error::DimensionMismatch {
            expected: b.ncols(),
            found: x.len(),
        });
    }
    Ok(DVector::from_fn(b.nrows(), |j, _| {
        let mut acc = 0.0;
        for k in 0..x.len() {
            let d = x[k] - b[(j, k)];
            acc += d * d;
        }
        p.eval_sq_dist(acc)
    }))
}

const JITTER_MIN: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-4;

/// Lower Cholesky factor of `K + jitter * I`.
#[derive(Debug, Clone)]
pub struct PsdFactor {
    lower: DMatrix<f64>,
    jitter: f64,
}

impl PsdFactor {
    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    /// Absolute jitter added to the diagonal.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    /// `L^{-1} B`.
    pub fn solve_lower(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.lower
            .solve_lower_triangular(b)
            .expect("cholesky factor has a positive diagonal")
    }

    pub fn solve_lower_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.lower
            .solve_lower_triangular(b)
            .expect("cholesky factor has a positive diagonal")
    }

    /// `L^{-T} B`.
    pub fn solve_upper(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.lower
            .tr_solve_lower_triangular(b)
            .expect("cholesky factor has a positive diagonal")
    }

    pub fn solve_upper_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.lower
            .tr_solve_lower_triangular(b)
            .expect("cholesky factor has a positive diagonal")
    }

    /// `(K + jitter I)^{-1} B`.
    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.solve_upper(&self.solve_lower(b))
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.solve_upper_vec(&self.solve_lower_vec(b))
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.lower.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// `L L^T`, i.e. the jittered input.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.lower * self.lower.transpose()
    }
}

/// Cholesky factorization with geometric jitter escalation from `1e-10` to
/// `1e-4` times the mean diagonal.
pub fn factorize_psd(k: &DMatrix<f64>) -> Result<PsdFactor> {
    let n = k.nrows();
    if n != k.ncols() {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: k.ncols(),
        });
    }
    if n == 0 {
        return Err(Error::invalid("K", "empty matrix"));
    }
    let scale = k.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
    for j in 0..n {
        for i in 0..j {
            let (a, b) = (k[(i, j)], k[(j, i)]);
            if (a - b).abs() > 1e-10 * scale {
                return Err(Error::invalid(
                    "K",
                    format!("not symmetric at ({i}, {j}): {a} vs {b}"),
                ));
            }
        }
    }
    let mean_diag = k.diagonal().mean();
    if !(mean_diag.is_finite() && mean_diag > 0.0) {
        return Err(Error::Factorization {
            max_jitter: 0.0,
            mean_diag,
        });
    }
    let mut rel = JITTER_MIN;
    while rel <= JITTER_MAX * (1.0 + 1e-9) {
        let jitter = rel * mean_diag;
        let mut kj = k.clone();
        for i in 0..n {
            kj[(i, i)] += jitter;
        }
        if let Some(chol) = kj.cholesky() {
            return Ok(PsdFactor {
                lower: chol.unpack(),
                jitter,
            });
        }
        log::debug!("cholesky failed with relative jitter {rel:e}; escalating");
        rel *= 10.0;
    }
    Err(Error::Factorization {
        max_jitter: JITTER_MAX * mean_diag,
        mean_diag,
    })
}

/// Quantities of the FITC conditional `p(f | u)`.
#[derive(Debug, Clone)]
pub struct FitcConditional {
    /// `P = K_XZ K_ZZ^{-1}`, N x M.
    pub projection: DMatrix<f64>,
    /// `L^{-1} K_ZX`, M x N, with `K_ZZ = L L^T`.
    pub whitened: DMatrix<f64>,
    /// `diag(K_XX - K_XZ K_ZZ^{-1} K_ZX)`, clamped at zero.
    pub cond_var: DVector<f64>,
}

pub fn fitc_conditional(
    k_xz: &DMatrix<f64>,
    k_zz: &PsdFactor,
    k_xx_diag: &DVector<f64>,
) -> Result<FitcConditional> {
    if k_xz.ncols() != k_zz.dim() {
        return Err(Error::DimensionMismatch {
            expected: k_zz.dim(),
            found: k_xz.ncols(),
        });
    }
    if k_xx_diag.len() != k_xz.nrows() {
        return Err(Error::DimensionMismatch {
            expected: k_xz.nrows(),
            found: k_xx_diag.len(),
        });
    }
    let whitened = k_zz.solve_lower(&k_xz.transpose());
    let projection = k_zz.solve_upper(&whitened).transpose();
    let cond_var = DVector::from_fn(k_xz.nrows(), |n, _| {
        let q: f64 = whitened.column(n).norm_squared();
        let r = k_xx_diag[n] - q;
        if r < -1e-8 {
            log::debug!("FITC conditional variance {r:e} at row {n} below tolerance");
        }
        r.max(0.0)
    });
    Ok(FitcConditional {
        projection,
        whitened,
        cond_var,
    })
}
