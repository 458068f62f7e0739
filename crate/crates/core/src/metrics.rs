//! Evaluation under the cost-reweighted distribution: misclassification cost
//! per 100 instances, weighted ECE and ROC-AUC, and variation summaries.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};

/// `100 · (1/N) Σ [λ 1(y=0, ŷ=1) + 1(y=1, ŷ=0)]`.
pub fn cost_per_100(predictions: &[bool], labels: &[bool], lambda: f64) -> Result<f64> {
    ensure_len("predictions vs labels", predictions.len(), labels.len())?;
    if labels.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = predictions
        .iter()
        .zip(labels)
        .map(|(&p, &y)| match (y, p) {
            (false, true) => lambda,
            (true, false) => 1.0,
            _ => 0.0,
        })
        .sum();
    Ok(100.0 * total / labels.len() as f64)
}

pub const DEFAULT_BINS: usize = 10;

/// Weighted expected calibration error over `n_bins` equal-width bins of
/// `[0, 1]`; a probability of exactly 1 falls in the last bin.
pub fn weighted_ece(probabilities: &[f64], outcomes: &[bool], weights: &[f64], n_bins: usize) -> Result<f64> {
    ensure_len("probabilities vs outcomes", probabilities.len(), outcomes.len())?;
    ensure_len("probabilities vs weights", probabilities.len(), weights.len())?;
    if probabilities.is_empty() {
        return Err(Error::invalid("ECE of an empty set"));
    }
    if n_bins == 0 {
        return Err(Error::invalid("ECE needs at least one bin"));
    }
    if probabilities.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::invalid("probabilities must lie in [0, 1]"));
    }
    // per bin: (weight, weighted outcome, weighted probability)
    let mut bins = vec![(0.0, 0.0, 0.0); n_bins];
    for ((&p, &y), &w) in probabilities.iter().zip(outcomes).zip(weights) {
        let b = ((p * n_bins as f64) as usize).min(n_bins - 1);
        bins[b].0 += w;
        bins[b].1 += w * f64::from(u8::from(y));
        bins[b].2 += w * p;
    }
    let total: f64 = bins.iter().map(|b| b.0).sum();
    if total <= 0.0 {
        return Err(Error::invalid("total weight must be positive"));
    }
    Ok(bins
        .iter()
        .filter(|b| b.0 > 0.0)
        .map(|&(w, o, p)| (w / total) * (o / w - p / w).abs())
        .sum())
}

/// Weighted probability that a positive outscores a negative, ties counting
/// one half; each pair contributes the product of its weights.
pub fn weighted_auc(scores: &[f64], outcomes: &[bool], weights: &[f64]) -> Result<f64> {
    ensure_len("scores vs outcomes", scores.len(), outcomes.len())?;
    ensure_len("scores vs weights", scores.len(), weights.len())?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let (mut w_pos, mut w_neg_below, mut pairs) = (0.0, 0.0, 0.0);
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        let (mut gp, mut gn) = (0.0, 0.0);
        while k < order.len() && scores[order[k]] == s {
            let i = order[k];
            if outcomes[i] {
                gp += weights[i];
            } else {
                gn += weights[i];
            }
            k += 1;
        }
        pairs += gp * (w_neg_below + 0.5 * gn);
        w_pos += gp;
        w_neg_below += gn;
    }
    if w_pos <= 0.0 || w_neg_below <= 0.0 {
        return Err(Error::invalid("ROC-AUC needs both outcome classes"));
    }
    Ok(pairs / (w_pos * w_neg_below))
}

/// `(mean, 1.96 · sd / √n)` with the population standard deviation.
pub fn mean_ci(values: &[f64]) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::invalid("a confidence interval needs at least two variations"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, 1.96 * var.sqrt() / n.sqrt()))
}

/// Identifies one scenario of the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioKey {
    pub alert_fpr: f64,
    pub lambda: f64,
    pub data_fraction: f64,
}

/// Costs of every strategy on one (seed, capacity setting) variation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationResult {
    pub seed_index: usize,
    pub capacity_index: usize,
    /// Strategy name to cost per 100 instances.
    pub costs: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub mean: f64,
    pub ci_half_width: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub ece: f64,
    pub roc_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub ci_method: String,
    pub ci_note: String,
    /// Win rates in this range are read as significant.
    pub significance_range: (f64, f64),
    pub reference_strategy: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub scenario: ScenarioKey,
    pub strategies: BTreeMap<String, StrategySummary>,
    /// Model name (classifier, each expert as seen by HEM / OvA) to metrics.
    pub models: BTreeMap<String, ModelMetrics>,
    /// Fraction of variations where the reference strategy is strictly cheaper.
    pub win_rates: BTreeMap<String, f64>,
    pub variations: Vec<VariationResult>,
    pub metadata: ReportMetadata,
}

pub const SIGNIFICANT_WIN_RATE: f64 = 0.68;

/// Aggregates variation results into means, 95% intervals and win rates of
/// `reference` against every other strategy.
pub fn summarize(
    scenario: ScenarioKey,
    variations: Vec<VariationResult>,
    models: BTreeMap<String, ModelMetrics>,
    reference: &str,
) -> Result<EvaluationReport> {
    if variations.len() < 2 {
        return Err(Error::invalid("a summary needs at least two variations"));
    }
    let names: Vec<String> = variations[0].costs.keys().cloned().collect();
    if variations.iter().any(|v| v.costs.keys().ne(names.iter())) {
        return Err(Error::invalid("variations report different strategy sets"));
    }
    let mut strategies = BTreeMap::new();
    for name in &names {
        let values: Vec<f64> = variations.iter().map(|v| v.costs[name]).collect();
        let (mean, half) = mean_ci(&values)?;
        strategies.insert(
            name.clone(),
            StrategySummary {
                mean,
                ci_half_width: half,
                n: values.len(),
            },
        );
    }
    let mut win_rates = BTreeMap::new();
    if names.iter().any(|n| n == reference) {
        for name in names.iter().filter(|n| *n != reference) {
            let wins = variations
                .iter()
                .filter(|v| v.costs[reference] < v.costs[name])
                .count();
            win_rates.insert(name.clone(), wins as f64 / variations.len() as f64);
        }
    }
    Ok(EvaluationReport {
        scenario,
        strategies,
        models,
        win_rates,
        variations,
        metadata: ReportMetadata {
            ci_method: "mean ± 1.96·sd/√n over variations".into(),
            ci_note: "normal approximation; may be unreliable for this few variations".into(),
            significance_range: (SIGNIFICANT_WIN_RATE, 1.0),
            reference_strategy: reference.into(),
        },
    })
}
