//! Synthetic stand-in for a monthly fraud dataset: numeric and categorical
//! features, a known logistic label model and an intercept drift over months.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data_model::{Dataset, Instance};
use crate::error::{Error, Result};
use crate::rng::{self, tags};
use crate::scorer::inverse_link;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticDataSpec {
    pub n_instances: usize,
    pub n_months: usize,
    /// Coefficients of the standard-normal numeric features.
    pub theta: Vec<f64>,
    /// Per categorical feature, the logit effect of each category.
    pub category_effects: Vec<Vec<f64>>,
    pub prevalence: f64,
    /// Intercept shift between the first and the last month.
    pub drift: f64,
}

impl Default for SyntheticDataSpec {
    fn default() -> Self {
        Self {
            n_instances: 200_000,
            n_months: 8,
            theta: vec![0.9, -0.7, 0.6, 0.5, -0.4, 0.35, 0.3, 0.0, 0.0],
            category_effects: vec![
                vec![-0.6, 0.0, 0.3, 0.9],
                vec![0.4, -0.2, 0.0, 0.5, -0.5, 0.1],
                vec![0.0, 0.7, -0.3],
            ],
            prevalence: 0.011,
            drift: 0.3,
        }
    }
}

impl SyntheticDataSpec {
    pub fn n_numeric(&self) -> usize {
        self.theta.len()
    }

    pub fn dim(&self) -> usize {
        self.theta.len() + self.category_effects.len()
    }

    /// Column indices of the categorical features.
    pub fn categorical_columns(&self) -> Vec<usize> {
        (self.n_numeric()..self.dim()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.prevalence > 0.0 && self.prevalence < 0.5) {
            return Err(Error::Config(format!("prevalence {} outside (0, 0.5)", self.prevalence)));
        }
        if self.n_months == 0 || self.n_instances < self.n_months {
            return Err(Error::Config("need at least one instance per month".into()));
        }
        if self.category_effects.iter().any(Vec::is_empty) {
            return Err(Error::Config("categorical feature without categories".into()));
        }
        if !self.drift.is_finite() || self.theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("generator coefficients must be finite".into()));
        }
        Ok(())
    }

    fn drift_at(&self, month: usize) -> f64 {
        if self.n_months <= 1 {
            return 0.0;
        }
        self.drift * (month as f64 / (self.n_months - 1) as f64 - 0.5)
    }

    fn logit_without_intercept(&self, x: &[f64], month: usize) -> f64 {
        let n = self.n_numeric();
        let numeric: f64 = self.theta.iter().zip(&x[..n]).map(|(t, v)| t * v).sum();
        let categorical: f64 = self
            .category_effects
            .iter()
            .zip(&x[n..])
            .map(|(eff, &c)| eff[c as usize])
            .sum();
        numeric + categorical + self.drift_at(month)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub dataset: Dataset,
    /// `P(y = 1 | x)` of every instance.
    pub true_prob: Vec<f64>,
    pub intercept: f64,
}

/// Months are equal contiguous blocks of ids; the intercept is set by
/// bisection so that the mean of `P(y = 1 | x)` equals the target prevalence.
pub fn generate_synthetic(spec: &SyntheticDataSpec, seed: u64) -> Result<SyntheticData> {
    spec.validate()?;
    let n = spec.n_instances;
    let d = spec.dim();
    let n_num = spec.n_numeric();
    let mut frng = rng::stream(seed, tags::SYNTH_FEATURES);
    let mut features = Vec::with_capacity(n);
    let mut months = Vec::with_capacity(n);
    let mut base = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = vec![0.0; d];
        for v in x.iter_mut().take(n_num) {
            *v = StandardNormal.sample(&mut frng);
        }
        for (k, eff) in spec.category_effects.iter().enumerate() {
            x[n_num + k] = frng.random_range(0..eff.len()) as f64;
        }
        let month = i * spec.n_months / n;
        base.push(spec.logit_without_intercept(&x, month));
        features.push(x);
        months.push(month);
    }

    let mean_prob = |b0: f64| base.iter().map(|&g| inverse_link(b0 + g)).sum::<f64>() / n as f64;
    let (mut lo, mut hi) = (-40.0f64, 40.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if mean_prob(mid) < spec.prevalence {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let intercept = 0.5 * (lo + hi);

    let mut lrng = rng::stream(seed, tags::SYNTH_LABELS);
    let true_prob: Vec<f64> = base.iter().map(|&g| inverse_link(intercept + g)).collect();
    let instances = features
        .into_iter()
        .zip(months)
        .zip(&true_prob)
        .enumerate()
        .map(|(i, ((x, month), &p))| Instance {
            id: i as u64,
            features: x,
            label: lrng.random::<f64>() < p,
            weight: 1.0,
            batch: month,
        })
        .collect();
    Ok(SyntheticData {
        dataset: Dataset::new(instances)?,
        true_prob,
        intercept,
    })
}
