//! The upstream alert classifier: training, threshold at a target validation
//! FPR, the implied cost ratio and alert filtering.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data_model::Dataset;
use crate::error::{ensure_len, Error, Result};
use crate::persist;
use crate::scorer::{self, inverse_link, Scorer, SearchGrid, Split, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertModel {
    pub scorer: Scorer,
    pub threshold: f64,
    pub target_fpr: f64,
    /// Fraction of validation instances flagged.
    pub alert_rate: f64,
    pub validation_recall: f64,
    pub validation_fpr: f64,
}

/// Smallest observed score `t` such that the share of negatives with
/// probability `>= t` is at most `target_fpr`.
///
/// With `target_fpr >= 1` every instance is flagged (the minimum score is
/// returned); when even the top negative alone exceeds the target, the value
/// just above the maximum negative score is returned.
pub fn pick_threshold(scores: &[f64], labels: &[bool], target_fpr: f64) -> Result<f64> {
    ensure_len("scores vs labels", scores.len(), labels.len())?;
    if !(0.0..=1.0).contains(&target_fpr) {
        return Err(Error::invalid(format!("target FPR {target_fpr} outside [0, 1]")));
    }
    let mut negatives: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &y)| !y)
        .map(|(&s, _)| s)
        .collect();
    if negatives.is_empty() {
        return Err(Error::invalid("threshold selection needs at least one negative"));
    }
    if target_fpr >= 1.0 {
        return Ok(scores.iter().copied().fold(f64::INFINITY, f64::min));
    }
    negatives.sort_by(|a, b| b.total_cmp(a));
    let n = negatives.len() as f64;
    let mut best = next_up(negatives[0]);
    // walk down the distinct negative scores while the FPR stays within target
    let mut k = 0;
    while k < negatives.len() {
        let v = negatives[k];
        let mut end = k;
        while end < negatives.len() && negatives[end] == v {
            end += 1;
        }
        if end as f64 / n <= target_fpr {
            best = v;
            k = end;
        } else {
            break;
        }
    }
    Ok(best)
}

fn next_up(v: f64) -> f64 {
    if v.is_nan() || v == f64::INFINITY {
        return v;
    }
    if v == 0.0 {
        return f64::from_bits(1);
    }
    let bits = v.to_bits();
    f64::from_bits(if v > 0.0 { bits + 1 } else { bits - 1 })
}

/// `λ_t = t / (1 - t)`: the cost ratio at which threshold `t` is Bayes-optimal.
pub fn lambda_from_threshold(t: f64) -> Result<f64> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::invalid(format!("threshold {t} outside (0, 1)")));
    }
    Ok(t / (1.0 - t))
}

/// Empirical (FPR, recall) of flagging `prob >= threshold`.
pub fn rates_at(probs: &[f64], labels: &[bool], threshold: f64) -> (f64, f64) {
    let (mut fp, mut neg, mut tp, mut pos) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &y) in probs.iter().zip(labels) {
        let flagged = p >= threshold;
        if y {
            pos += 1;
            tp += usize::from(flagged);
        } else {
            neg += 1;
            fp += usize::from(flagged);
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    (ratio(fp, neg), ratio(tp, pos))
}

impl AlertModel {
    /// Fits the scorer on `train` (selecting over `grid` on `validation`) and
    /// sets the threshold at `target_fpr` on `validation`.
    pub fn train(
        train: &Dataset,
        validation: &Dataset,
        target_fpr: f64,
        base: &TrainConfig,
        grid: &SearchGrid,
    ) -> Result<Self> {
        let (tx, ty) = (train.feature_matrix(), train.labels());
        let (vx, vy) = (validation.feature_matrix(), validation.labels());
        let (tw, vw) = (vec![1.0; train.len()], vec![1.0; validation.len()]);
        let (scorer, _) = scorer::select(
            &Split { x: &tx, targets: &ty, weights: &tw },
            &Split { x: &vx, targets: &vy, weights: &vw },
            base,
            grid,
        )?;
        Self::calibrate(scorer, validation, target_fpr)
    }

    /// Sets the threshold of an already trained scorer.
    pub fn calibrate(scorer: Scorer, validation: &Dataset, target_fpr: f64) -> Result<Self> {
        if !(target_fpr > 0.0 && target_fpr < 1.0) {
            return Err(Error::invalid(format!("target FPR {target_fpr} outside (0, 1)")));
        }
        let probs = scorer.probabilities(&validation.feature_matrix())?;
        let labels = validation.labels();
        let threshold = pick_threshold(&probs, &labels, target_fpr)?;
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::Degenerate(format!(
                "alert threshold {threshold} is not strictly inside (0, 1)"
            )));
        }
        let (validation_fpr, validation_recall) = rates_at(&probs, &labels, threshold);
        let alert_rate =
            probs.iter().filter(|&&p| p >= threshold).count() as f64 / probs.len() as f64;
        Ok(Self {
            scorer,
            threshold,
            target_fpr,
            alert_rate,
            validation_recall,
            validation_fpr,
        })
    }

    /// Alert-model probability `M(x)`.
    pub fn score(&self, x: &[f64]) -> f64 {
        inverse_link(self.scorer.score(x))
    }

    pub fn is_alert(&self, x: &[f64]) -> bool {
        self.score(x) >= self.threshold
    }

    pub fn lambda_t(&self) -> f64 {
        self.threshold / (1.0 - self.threshold)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        persist::save("alert-model", self, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        persist::load("alert-model", path)
    }
}

/// Instances flagged by the alert model, with ids, weights and batches kept.
pub fn filter_alerts(model: &AlertModel, dataset: &Dataset) -> Dataset {
    dataset.filter(|inst| model.is_alert(&inst.features))
}
