//! Trained models and their JSON representation.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::PcaTransform;
use crate::error::{Error, Result};
use crate::gsm::GsmDensity;
use crate::kernel::{factorize_psd, kernel_matrix_sym, KernelParams, PsdFactor};

pub const FORMAT_VERSION: u32 = 1;

/// Quantity used to select the best epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monitor {
    ValBagAuc,
    TrainBagAuc,
    Elbo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub monitor: Monitor,
    /// `null` in JSON when not finite.
    #[serde(with = "nullable_f64")]
    pub best_score: f64,
    pub seed: u64,
}

mod nullable_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

/// Immutable result of training. Holds the inducing posterior together with
/// cached factors for prediction.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    z: DMatrix<f64>,
    m: DVector<f64>,
    s: DMatrix<f64>,
    kernel: KernelParams,
    psi: GsmDensity,
    h: f64,
    dim: usize,
    pca: Option<PcaTransform>,
    metadata: TrainingMetadata,
    kzz: PsdFactor,
    /// `K_ZZ^{-1} m`.
    weights: DVector<f64>,
    /// `L^{-1} S L^{-T}`.
    whitened_cov: DMatrix<f64>,
}

impl TrainedModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        z: DMatrix<f64>,
        m: DVector<f64>,
        s: DMatrix<f64>,
        kernel: KernelParams,
        psi: GsmDensity,
        h: f64,
        dim: usize,
        metadata: TrainingMetadata,
    ) -> Result<Self> {
        let mdim = z.nrows();
        if z.ncols() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: z.ncols(),
            });
        }
        if m.len() != mdim || s.nrows() != mdim || s.ncols() != mdim {
            return Err(Error::Model(format!(
                "inducing posterior shapes disagree: {mdim} inducing points, m has {}, S is {}x{}",
                m.len(),
                s.nrows(),
                s.ncols()
            )));
        }
        if m.iter().chain(s.iter()).chain(z.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Model("non-finite parameter".into()));
        }
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::invalid("H", format!("must be finite and > 0, got {h}")));
        }
        psi.validate()?;
        let kernel = KernelParams::new(kernel.variance(), kernel.lengthscale(), kernel.norm_mode())?;
        let kzz = factorize_psd(&kernel_matrix_sym(&z, &kernel))?;
        let weights = kzz.solve_vec(&m);
        let a = kzz.solve_lower(&s);
        let w = kzz.solve_lower(&a.transpose());
        let whitened_cov = (&w + w.transpose()) * 0.5;
        Ok(Self {
            z,
            m,
            s,
            kernel,
            psi,
            h,
            dim,
            pca: None,
            metadata,
            kzz,
            weights,
            whitened_cov,
        })
    }

    pub fn with_metadata(mut self, metadata: TrainingMetadata) -> Self {
        self.metadata = metadata;
        self
    }

    /// Attaches the projection applied to raw features before the model.
    pub fn with_pca(mut self, pca: PcaTransform) -> Result<Self> {
        if pca.n_components() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: pca.n_components(),
            });
        }
        self.pca = Some(pca);
        Ok(self)
    }

    pub fn inducing_points(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.m
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.s
    }

    pub fn kernel(&self) -> &KernelParams {
        &self.kernel
    }

    pub fn psi(&self) -> &GsmDensity {
        &self.psi
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Feature dimension seen by the GP (after PCA, if any).
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Feature dimension expected in input files.
    pub fn input_dim(&self) -> usize {
        self.pca.as_ref().map_or(self.dim, |p| p.input_dim())
    }

    pub fn pca(&self) -> Option<&PcaTransform> {
        self.pca.as_ref()
    }

    pub fn metadata(&self) -> &TrainingMetadata {
        &self.metadata
    }

    pub(crate) fn kzz(&self) -> &PsdFactor {
        &self.kzz
    }

    pub(crate) fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub(crate) fn whitened_cov(&self) -> &DMatrix<f64> {
        &self.whitened_cov
    }

    /// Maps raw input features (N x input_dim) into model space.
    pub fn transform_features(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                found: x.ncols(),
            });
        }
        match &self.pca {
            Some(p) => crate::data::apply_pca(p, x),
            None => Ok(x.clone()),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            format_version: FORMAT_VERSION,
            dim: self.dim,
            h: self.h,
            kernel: self.kernel,
            psi: self.psi,
            inducing_points: rows(&self.z),
            mean: self.m.iter().copied().collect(),
            covariance: rows(&self.s),
            pca: self.pca.as_ref().map(|p| PcaFile {
                components: rows(&p.components),
                mean: p.mean.iter().copied().collect(),
                explained_variance: p.explained_variance.clone(),
                total_variance: p.total_variance,
            }),
            metadata: self.metadata,
        };
        let mut s = serde_json::to_string_pretty(&file)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.format_version != FORMAT_VERSION {
            return Err(Error::Model(format!(
                "unsupported format version {} (expected {FORMAT_VERSION})",
                file.format_version
            )));
        }
        let z = matrix(&file.inducing_points, file.dim, "inducing_points")?;
        let mdim = z.nrows();
        let s = matrix(&file.covariance, mdim, "covariance")?;
        let model = Self::new(
            z,
            DVector::from_vec(file.mean),
            s,
            file.kernel,
            file.psi,
            file.h,
            file.dim,
            file.metadata,
        )?;
        match file.pca {
            None => Ok(model),
            Some(p) => {
                let input_dim = p.mean.len();
                let components = matrix(&p.components, file.dim, "pca.components")?;
                if components.nrows() != input_dim {
                    return Err(Error::Model("pca.components rows disagree with pca.mean".into()));
                }
                model.with_pca(PcaTransform {
                    components,
                    mean: DVector::from_vec(p.mean),
                    explained_variance: p.explained_variance,
                    total_variance: p.total_variance,
                })
            }
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    dim: usize,
    h: f64,
    kernel: KernelParams,
    psi: GsmDensity,
    inducing_points: Vec<Vec<f64>>,
    mean: Vec<f64>,
    covariance: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pca: Option<PcaFile>,
    metadata: TrainingMetadata,
}

#[derive(Serialize, Deserialize)]
struct PcaFile {
    components: Vec<Vec<f64>>,
    mean: Vec<f64>,
    explained_variance: Vec<f64>,
    total_variance: f64,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix(rows: &[Vec<f64>], ncols: usize, what: &str) -> Result<DMatrix<f64>> {
    if let Some(bad) = rows.iter().position(|r| r.len() != ncols) {
        return Err(Error::Model(format!(
            "{what}: row {bad} has {} entries, expected {ncols}",
            rows[bad].len()
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::fit_pca;

    fn meta() -> TrainingMetadata {
        TrainingMetadata {
            epochs_run: 4,
            best_epoch: 2,
            monitor: Monitor::ValBagAuc,
            best_score: 0.9,
            seed: 7,
        }
    }

    fn toy() -> TrainedModel {
        let z = DMatrix::from_row_slice(3, 2, &[0.0, 0.1, 1.0, -0.3, 0.5, 2.0]);
        let m = DVector::from_vec(vec![0.3, -1.2, 0.7]);
        let s = DMatrix::from_row_slice(3, 3, &[0.5, 0.1, 0.0, 0.1, 0.4, 0.05, 0.0, 0.05, 0.3]);
        TrainedModel::new(
            z,
            m,
            s,
            KernelParams::squared(0.5, 2.0).unwrap(),
            GsmDensity::gamma_mix(1.0, 2.5).unwrap(),
            100.0,
            2,
            meta(),
        )
        .unwrap()
    }

    #[test]
    fn json_round_trip_is_exact() {
        let a = toy();
        let text = a.to_json().unwrap();
        let b = TrainedModel::from_json(&text).unwrap();
        assert_eq!(a.z, b.z);
        assert_eq!(a.m, b.m);
        assert_eq!(a.s, b.s);
        assert_eq!(a.kernel, b.kernel);
        assert_eq!(a.psi, b.psi);
        assert_eq!(a.metadata, b.metadata);
        assert_eq!(text, b.to_json().unwrap());
    }

    #[test]
    fn matrices_are_row_major() {
        let v: serde_json::Value = serde_json::from_str(&toy().to_json().unwrap()).unwrap();
        assert_eq!(v["inducing_points"][2][1].as_f64(), Some(2.0));
        assert_eq!(v["format_version"].as_u64(), Some(1));
        assert_eq!(v["psi"]["kind"], "gamma_mix");
        assert_eq!(v["kernel"]["norm_mode"], "squared");
    }

    #[test]
    fn nan_score_survives_round_trip() {
        let a = toy().with_metadata(TrainingMetadata {
            best_score: f64::NAN,
            ..meta()
        });
        let b = TrainedModel::from_json(&a.to_json().unwrap()).unwrap();
        assert!(b.metadata().best_score.is_nan());
    }

    #[test]
    fn pca_round_trip() {
        let x = DMatrix::from_fn(10, 4, |i, j| ((i * 7 + j * 3) % 5) as f64 + 0.1 * j as f64);
        let pca = fit_pca(&x, 2).unwrap();
        let a = toy().with_pca(pca).unwrap();
        assert_eq!(a.input_dim(), 4);
        let b = TrainedModel::from_json(&a.to_json().unwrap()).unwrap();
        assert_eq!(a.pca(), b.pca());
        assert_eq!(a.transform_features(&x).unwrap(), b.transform_features(&x).unwrap());
        assert!(a.transform_features(&DMatrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn rejects_bad_files() {
        let text = toy().to_json().unwrap();
        let bumped = text.replace("\"format_version\": 1", "\"format_version\": 9");
        assert!(matches!(TrainedModel::from_json(&bumped), Err(Error::Model(_))));
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["mean"] = serde_json::json!([1.0]);
        assert!(TrainedModel::from_json(&v.to_string()).is_err());
        v = serde_json::from_str(&text).unwrap();
        v["kernel"]["l"] = serde_json::json!(-1.0);
        assert!(TrainedModel::from_json(&v.to_string()).is_err());
        assert!(TrainedModel::from_json("{").is_err());
    }
}
