//! Probabilistic binary scorers trained on the weighted logistic loss.
//!
//! One type serves as the classifier, the alert model, the human expertise
//! model and every OvA head. Two learner families are available: a
//! linear-logistic model fitted by damped Newton steps and gradient-boosted
//! decision stumps. Both minimise
//!
//! ```text
//! (1 / Σw) Σ w_i [ -y_i ln σ(g_i) - (1 - y_i) ln(1 - σ(g_i)) ]  +  penalty
//! ```

mod linear;
mod stumps;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data_model::Matrix;
use crate::error::{ensure_len, Error, Result};
use crate::persist;

pub use linear::{linear_loss_and_gradient, LinearModel};
pub use stumps::{Stump, StumpEnsemble};

/// Probabilities inside log terms are clipped to `[EPS, 1 - EPS]`.
pub const PROB_EPS: f64 = 1e-12;

/// The logistic inverse link `1 / (1 + e^{-g})`.
pub fn inverse_link(g: f64) -> f64 {
    if g >= 0.0 {
        1.0 / (1.0 + (-g).exp())
    } else {
        let e = g.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    (p / (1.0 - p)).ln()
}

fn point_loss(g: f64, y: bool) -> f64 {
    let p = inverse_link(g).clamp(PROB_EPS, 1.0 - PROB_EPS);
    if y {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Weighted mean logistic loss of raw scores against binary labels.
pub fn weighted_log_loss(scores: &[f64], labels: &[bool], weights: &[f64]) -> Result<f64> {
    ensure_len("scores vs labels", scores.len(), labels.len())?;
    ensure_len("scores vs weights", scores.len(), weights.len())?;
    if weights.iter().any(|&w| !(w >= 0.0)) {
        return Err(Error::invalid("weights must be non-negative"));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::invalid("total weight must be positive"));
    }
    let sum: f64 = scores
        .iter()
        .zip(labels)
        .zip(weights)
        .map(|((&g, &y), &w)| if w == 0.0 { 0.0 } else { w * point_loss(g, y) })
        .sum();
    Ok(sum / total)
}

/// `Σ c_i y_i / Σ c_i`.
pub fn weighted_base_rate(labels: &[bool], weights: &[f64]) -> f64 {
    let total: f64 = weights.iter().sum();
    let pos: f64 = labels
        .iter()
        .zip(weights)
        .filter(|(y, _)| **y)
        .map(|(_, w)| w)
        .sum();
    pos / total
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LearnerFamily {
    LinearLogistic,
    BoostedStumps,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub family: LearnerFamily,
    /// Newton iterations (linear) or number of stumps (boosted).
    pub max_iterations: usize,
    /// Shrinkage applied to every stump. The linear family takes full Newton
    /// steps with backtracking and ignores it.
    pub learning_rate: f64,
    /// L2 penalty on the linear weights, or on the stump leaf values.
    pub l2: f64,
    /// Both families are deterministic; the seed is recorded with the model.
    pub seed: u64,
    /// Shift added to the default initial score `logit(Σ c_i y_i / Σ c_i)`.
    pub initial_score_offset: f64,
}

impl TrainConfig {
    pub fn linear() -> Self {
        Self {
            family: LearnerFamily::LinearLogistic,
            max_iterations: 100,
            learning_rate: 1.0,
            l2: 1e-4,
            seed: 0,
            initial_score_offset: 0.0,
        }
    }

    pub fn stumps() -> Self {
        Self {
            family: LearnerFamily::BoostedStumps,
            max_iterations: 150,
            learning_rate: 0.1,
            l2: 1.0,
            seed: 0,
            initial_score_offset: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::invalid("l2 penalty must be non-negative"));
        }
        if self.max_iterations == 0 {
            return Err(Error::invalid("max_iterations must be positive"));
        }
        if !self.initial_score_offset.is_finite() {
            return Err(Error::NonFinite("initial score offset"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Model {
    Constant { score: f64 },
    LinearLogistic(LinearModel),
    BoostedStumps(StumpEnsemble),
}

/// A trained real-valued scoring function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scorer {
    pub model: Model,
    pub dim: usize,
    pub config: TrainConfig,
    /// Set when training fell back to a constant score (single-class targets
    /// or no improvement over the base rate).
    pub degenerate: bool,
}

impl Scorer {
    pub fn constant(score: f64, dim: usize, config: TrainConfig) -> Self {
        Self {
            model: Model::Constant { score },
            dim,
            config,
            degenerate: true,
        }
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        match &self.model {
            Model::Constant { score } => *score,
            Model::LinearLogistic(m) => m.score(x),
            Model::BoostedStumps(m) => m.score(x),
        }
    }

    pub fn probability(&self, x: &[f64]) -> f64 {
        inverse_link(self.score(x))
    }

    /// Class 1 iff the probability strictly exceeds one half.
    pub fn predict_class(&self, x: &[f64]) -> bool {
        predict_from_score(self.score(x))
    }

    pub fn scores(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.rows() > 0 && x.cols() != self.dim {
            return Err(Error::invalid(format!(
                "scorer expects {} features, got {}",
                self.dim,
                x.cols()
            )));
        }
        Ok(x.iter_rows().map(|r| self.score(r)).collect())
    }

    pub fn probabilities(&self, x: &Matrix) -> Result<Vec<f64>> {
        Ok(self.scores(x)?.into_iter().map(inverse_link).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        persist::save("scorer", self, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        persist::load("scorer", path)
    }
}

pub fn predict_from_score(score: f64) -> bool {
    inverse_link(score) > 0.5
}

/// Trains a scorer on `x` against binary `targets` with instance `weights`.
///
/// Single-class targets yield a constant scorer at the clipped base rate with
/// `degenerate` set; a warning is logged.
pub fn fit(x: &Matrix, targets: &[bool], weights: &[f64], config: &TrainConfig) -> Result<Scorer> {
    config.validate()?;
    ensure_len("rows vs targets", x.rows(), targets.len())?;
    ensure_len("rows vs weights", x.rows(), weights.len())?;
    if x.rows() == 0 {
        return Err(Error::Degenerate("no training rows".into()));
    }
    if !x.is_finite() {
        return Err(Error::NonFinite("training features"));
    }
    if weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
        return Err(Error::invalid("training weights must be positive and finite"));
    }
    let base = weighted_base_rate(targets, weights);
    let constant_score = logit(base);
    let n_pos = targets.iter().filter(|&&t| t).count();
    if n_pos == 0 || n_pos == targets.len() {
        log::warn!("single-class targets ({n_pos} of {} positive); returning constant scorer", targets.len());
        return Ok(Scorer::constant(constant_score, x.cols(), *config));
    }

    let initial = constant_score + config.initial_score_offset;
    let model = match config.family {
        LearnerFamily::LinearLogistic => {
            Model::LinearLogistic(linear::fit(x, targets, weights, config, initial))
        }
        LearnerFamily::BoostedStumps => {
            Model::BoostedStumps(stumps::fit(x, targets, weights, config, initial))
        }
    };
    let scorer = Scorer {
        model,
        dim: x.cols(),
        config: *config,
        degenerate: false,
    };

    // The fitted model must not be worse than the uninformed constant.
    let fitted_loss = weighted_log_loss(&scorer.scores(x)?, targets, weights)?;
    let constant_loss = weighted_log_loss(&vec![constant_score; x.rows()], targets, weights)?;
    if fitted_loss > constant_loss {
        log::warn!("fit ({fitted_loss:.6}) did not beat the constant scorer ({constant_loss:.6})");
        return Ok(Scorer::constant(constant_score, x.cols(), *config));
    }
    Ok(scorer)
}

/// Hyperparameter grid searched by validation weighted log-loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchGrid {
    pub learning_rates: Vec<f64>,
    pub l2: Vec<f64>,
    /// Shifts of the initial score relative to the weighted base-rate logit.
    pub initial_offsets: Vec<f64>,
}

impl SearchGrid {
    pub fn for_family(family: LearnerFamily) -> Self {
        match family {
            LearnerFamily::LinearLogistic => Self {
                learning_rates: vec![1.0],
                l2: vec![1e-4, 1e-3, 1e-2],
                initial_offsets: vec![0.0],
            },
            LearnerFamily::BoostedStumps => Self {
                learning_rates: vec![0.05, 0.1, 0.3],
                l2: vec![0.1, 1.0, 10.0],
                initial_offsets: vec![0.0],
            },
        }
    }

    /// Adds the initial-score sweep `{0, 0.4, ..., 2.0}` used for the classifier.
    pub fn with_offset_sweep(mut self) -> Self {
        self.initial_offsets = (0..=5).map(|k| 0.4 * k as f64).collect();
        self
    }

    pub fn single(config: &TrainConfig) -> Self {
        Self {
            learning_rates: vec![config.learning_rate],
            l2: vec![config.l2],
            initial_offsets: vec![config.initial_score_offset],
        }
    }
}

/// Training and validation views for [`select`].
pub struct Split<'a> {
    pub x: &'a Matrix,
    pub targets: &'a [bool],
    pub weights: &'a [f64],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub chosen: TrainConfig,
    pub validation_loss: f64,
    pub candidates: usize,
}

/// Fits every grid point on `train` and keeps the lowest validation loss
/// (first candidate wins ties).
pub fn select(
    train: &Split<'_>,
    validation: &Split<'_>,
    base: &TrainConfig,
    grid: &SearchGrid,
) -> Result<(Scorer, SearchOutcome)> {
    let mut best: Option<(Scorer, f64)> = None;
    let mut candidates = 0;
    // learning rate has no effect on Newton fits
    let learning_rates = match base.family {
        LearnerFamily::LinearLogistic => &grid.learning_rates[..grid.learning_rates.len().min(1)],
        LearnerFamily::BoostedStumps => &grid.learning_rates[..],
    };
    for &offset in &grid.initial_offsets {
        for &lr in learning_rates {
            for &l2 in &grid.l2 {
                let config = TrainConfig {
                    learning_rate: lr,
                    l2,
                    initial_score_offset: offset,
                    ..*base
                };
                let scorer = fit(train.x, train.targets, train.weights, &config)?;
                candidates += 1;
                let loss = if validation.x.rows() == 0 {
                    weighted_log_loss(&scorer.scores(train.x)?, train.targets, train.weights)?
                } else {
                    weighted_log_loss(
                        &scorer.scores(validation.x)?,
                        validation.targets,
                        validation.weights,
                    )?
                };
                if best.as_ref().is_none_or(|(_, b)| loss < *b) {
                    best = Some((scorer, loss));
                }
            }
        }
    }
    let (scorer, validation_loss) = best.ok_or_else(|| Error::invalid("empty search grid"))?;
    let outcome = SearchOutcome {
        chosen: scorer.config,
        validation_loss,
        candidates,
    };
    Ok((scorer, outcome))
}
