//! Bag- and instance-level classification metrics.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::MilDataset;
use crate::error::{Error, Result};
use crate::model::TrainedModel;
use crate::predict::{bag_predict, BagPrediction};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Area under the ROC curve as the Mann-Whitney statistic, ties counted as
/// one half via mid-ranks.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            found: labels.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Metric("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Metric(format!(
            "AUC needs both classes ({n_pos} positive, {n_neg} negative)"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_pos += mid * order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

/// Accuracy and F1 of `score >= threshold` against binary labels.
pub fn accuracy_f1(scores: &[f64], labels: &[u8], threshold: f64) -> Result<(f64, f64)> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            found: labels.len(),
        });
    }
    if scores.is_empty() {
        return Err(Error::Metric("no samples".into()));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let accuracy = (tp + tn) as f64 / scores.len() as f64;
    let denom = 2 * tp + fp + fn_;
    let f1 = if tp == 0 { 0.0 } else { 2.0 * tp as f64 / denom as f64 };
    Ok((accuracy, f1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelMetrics {
    pub accuracy: f64,
    pub f1: f64,
    /// `None` when only one class is present.
    pub auc: Option<f64>,
    pub count: usize,
    pub positives: usize,
}

impl LevelMetrics {
    pub fn compute(scores: &[f64], labels: &[u8], threshold: f64) -> Result<Self> {
        let (accuracy, f1) = accuracy_f1(scores, labels, threshold)?;
        let positives = labels.iter().filter(|&&l| l == 1).count();
        let auc = if positives == 0 || positives == labels.len() {
            None
        } else {
            Some(auc(scores, labels)?)
        };
        Ok(Self {
            accuracy,
            f1,
            auc,
            count: labels.len(),
            positives,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub bag: LevelMetrics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance: Option<LevelMetrics>,
    pub threshold: f64,
    pub samples: usize,
}

impl EvalReport {
    /// Scores the given predictions, one per bag of `data` in order.
    pub fn from_predictions(data: &MilDataset, preds: &[BagPrediction], threshold: f64, samples: usize) -> Result<Self> {
        if preds.len() != data.n_bags() {
            return Err(Error::DimensionMismatch {
                expected: data.n_bags(),
                found: preds.len(),
            });
        }
        let bag_scores: Vec<f64> = preds.iter().map(|p| p.mean).collect();
        let bag = LevelMetrics::compute(&bag_scores, data.bag_labels(), threshold)?;
        let mut inst_scores = Vec::new();
        let mut inst_labels = Vec::new();
        for (b, pred) in preds.iter().enumerate() {
            for (k, &n) in data.bag(b).iter().enumerate() {
                if let Some(y) = data.instance_labels()[n] {
                    inst_scores.push(pred.instances[k].mean);
                    inst_labels.push(y);
                }
            }
        }
        let instance = if inst_labels.is_empty() {
            None
        } else {
            Some(LevelMetrics::compute(&inst_scores, &inst_labels, threshold)?)
        };
        Ok(Self {
            bag,
            instance,
            threshold,
            samples,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Predicts every bag of `data` (raw input features) and scores the result.
pub fn predict_dataset<R: Rng + ?Sized>(
    model: &TrainedModel,
    data: &MilDataset,
    samples: usize,
    rng: &mut R,
) -> Result<Vec<BagPrediction>> {
    let x = model.transform_features(data.features())?;
    (0..data.n_bags())
        .map(|b| bag_predict(model, &x.select_rows(data.bag(b)), samples, rng))
        .collect()
}

pub fn evaluate<R: Rng + ?Sized>(
    model: &TrainedModel,
    data: &MilDataset,
    samples: usize,
    threshold: f64,
    rng: &mut R,
) -> Result<EvalReport> {
    let preds = predict_dataset(model, data, samples, rng)?;
    EvalReport::from_predictions(data, &preds, threshold, samples)
}
