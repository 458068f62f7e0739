//! Synthetic experts with instance-dependent error probabilities.
//!
//! An expert sees preprocessed features `x̄` and the alert-model score `m`.
//! With `u = (w·x̄ + w_M m) / √(w·w + w_M²)` its error probabilities are
//!
//! ```text
//! P(predict 1 | y = 0, x) = σ(β0 − α u)
//! P(predict 0 | y = 1, x) = σ(β1 + α u)
//! ```
//!
//! Teams are generated by sampling the dependence parameters, then a target
//! expected cost, then an (FPR, FNR) pair on that cost's iso-line, and
//! finally solving for the intercepts by bisection on a calibration split.

use std::collections::BTreeMap;

use rand::Rng as _;
use rand_distr::{Bernoulli, Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::data_model::{Dataset, Matrix};
use crate::error::{ensure_len, Error, Result};
use crate::rng::{self, tags, Rng};
use crate::scorer::inverse_link;

/// Which columns are categorical and which one is the protected attribute.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub categorical: Vec<usize>,
    pub protected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ColumnMap {
    /// Sorted fitting-split values; output is `rank / (N + 1) − 0.5`.
    Numeric { sorted: Vec<f64> },
    /// Category code to its zero-mean encoding.
    Categorical {
        #[serde(with = "code_pairs")]
        encoding: BTreeMap<i64, f64>,
    },
}

/// Integer-keyed maps as `[code, value]` pairs; JSON object keys are strings.
mod code_pairs {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(map: &BTreeMap<i64, f64>, s: S) -> Result<S::Ok, S::Error> {
        map.iter().collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<i64, f64>, D::Error> {
        Ok(Vec::<(i64, f64)>::deserialize(d)?.into_iter().collect())
    }
}

/// Fitted feature preprocessing for the expert model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSpec {
    pub columns: Vec<ColumnMap>,
    pub protected: usize,
}

fn category_code(v: f64) -> Result<i64> {
    if v.fract() != 0.0 || !v.is_finite() {
        return Err(Error::invalid(format!("categorical value {v} is not an integer code")));
    }
    Ok(v as i64)
}

impl PreprocessSpec {
    /// Fits quantile maps for numeric columns and prevalence-ordered target
    /// encodings for categorical columns on `data`.
    pub fn fit(data: &Dataset, schema: &FeatureSchema) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::invalid("cannot fit preprocessing on an empty split"));
        }
        if schema.protected >= data.dim() || schema.categorical.iter().any(|&c| c >= data.dim()) {
            return Err(Error::invalid("feature schema references a missing column"));
        }
        let mut columns = Vec::with_capacity(data.dim());
        for k in 0..data.dim() {
            if schema.categorical.contains(&k) {
                // code -> (count, positives)
                let mut stats: BTreeMap<i64, (usize, usize)> = BTreeMap::new();
                for inst in data.iter() {
                    let e = stats.entry(category_code(inst.features[k])?).or_default();
                    e.0 += 1;
                    e.1 += usize::from(inst.label);
                }
                let mut order: Vec<(i64, f64)> = stats
                    .iter()
                    .map(|(&c, &(n, pos))| (c, pos as f64 / n as f64))
                    .collect();
                order.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
                let n_cat = order.len() as f64;
                let mut encoding: BTreeMap<i64, f64> = order
                    .iter()
                    .enumerate()
                    .map(|(rank, &(c, _))| (c, rank as f64 / n_cat))
                    .collect();
                let mean = data
                    .iter()
                    .map(|i| encoding[&(i.features[k] as i64)])
                    .sum::<f64>()
                    / data.len() as f64;
                for v in encoding.values_mut() {
                    *v -= mean;
                }
                columns.push(ColumnMap::Categorical { encoding });
            } else {
                let mut sorted: Vec<f64> = data.iter().map(|i| i.features[k]).collect();
                sorted.sort_by(|a, b| a.total_cmp(b));
                columns.push(ColumnMap::Numeric { sorted });
            }
        }
        Ok(Self {
            columns,
            protected: schema.protected,
        })
    }

    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    pub fn transform_row(&self, x: &[f64], out: &mut [f64]) {
        for ((col, &v), o) in self.columns.iter().zip(x).zip(out.iter_mut()) {
            *o = match col {
                ColumnMap::Numeric { sorted } => {
                    let rank = sorted.partition_point(|&s| s <= v);
                    rank as f64 / (sorted.len() + 1) as f64 - 0.5
                }
                ColumnMap::Categorical { encoding } => {
                    match category_code(v).ok().and_then(|c| encoding.get(&c)) {
                        Some(&e) => e,
                        None => {
                            log::warn!("unseen category {v}; encoding as 0");
                            0.0
                        }
                    }
                }
            };
        }
    }

    /// Preprocessed feature matrix of `data`.
    pub fn transform(&self, data: &Dataset) -> Result<Matrix> {
        if data.dim() != self.dim() && !data.is_empty() {
            return Err(Error::invalid(format!(
                "preprocessing fitted on {} features, data has {}",
                self.dim(),
                data.dim()
            )));
        }
        let mut m = Matrix::zeros(data.len(), self.dim());
        for (r, inst) in data.iter().enumerate() {
            self.transform_row(&inst.features, m.row_mut(r));
        }
        Ok(m)
    }
}

/// The five-parameter error model of one expert.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertParams {
    pub w: Vec<f64>,
    pub w_m: f64,
    pub alpha: f64,
    pub beta0: f64,
    pub beta1: f64,
}

impl ExpertParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) {
            return Err(Error::invalid(format!("alpha must be non-negative, got {}", self.alpha)));
        }
        if self.norm() <= 0.0 {
            return Err(Error::invalid("expert weights have zero norm"));
        }
        Ok(())
    }

    fn norm(&self) -> f64 {
        (self.w.iter().map(|v| v * v).sum::<f64>() + self.w_m * self.w_m).sqrt()
    }

    /// Normalised projection `u` of one instance.
    pub fn projection(&self, x_bar: &[f64], model_score: f64) -> f64 {
        let dot: f64 = self.w.iter().zip(x_bar).map(|(a, b)| a * b).sum();
        (dot + self.w_m * model_score) / self.norm()
    }

    /// `(p_fp, p_fn)` at projection `u`.
    pub fn error_probabilities_at(&self, u: f64) -> (f64, f64) {
        (
            inverse_link(self.beta0 - self.alpha * u),
            inverse_link(self.beta1 + self.alpha * u),
        )
    }

    /// Probability of deciding correctly given the true label.
    pub fn correct_probability(&self, x_bar: &[f64], model_score: f64, label: bool) -> f64 {
        let (p_fp, p_fn) = self.error_probabilities_at(self.projection(x_bar, model_score));
        if label {
            1.0 - p_fn
        } else {
            1.0 - p_fp
        }
    }
}

pub fn error_probabilities(params: &ExpertParams, x_bar: &[f64], model_score: f64) -> Result<(f64, f64)> {
    params.validate()?;
    Ok(params.error_probabilities_at(params.projection(x_bar, model_score)))
}

/// `(1/N) Σ [λ p_fp_i 1(y_i = 0) + p_fn_i 1(y_i = 1)]`.
pub fn expected_cost(p_fp: &[f64], p_fn: &[f64], labels: &[bool], lambda: f64) -> Result<f64> {
    ensure_len("p_fp vs labels", p_fp.len(), labels.len())?;
    ensure_len("p_fn vs labels", p_fn.len(), labels.len())?;
    if labels.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = p_fp
        .iter()
        .zip(p_fn)
        .zip(labels)
        .map(|((&fp, &fnr), &y)| if y { fnr } else { lambda * fp })
        .sum();
    Ok(total / labels.len() as f64)
}

/// The FPR on the iso-cost line of `cost` at a given FNR:
/// `T / (λ(1−p)) − p / (λ(1−p)) · FNR`. Range checking is the caller's.
pub fn target_fpr_from_cost(cost: f64, fnr: f64, lambda: f64, prevalence: f64) -> f64 {
    let denom = lambda * (1.0 - prevalence);
    cost / denom - prevalence / denom * fnr
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorKind {
    /// Mean of `σ(β − α u)` over negatives.
    FalsePositive,
    /// Mean of `σ(β + α u)` over positives.
    FalseNegative,
}

pub const BETA_BRACKET: (f64, f64) = (-40.0, 40.0);
pub const BISECTION_MAX_ITER: usize = 200;

/// Empirical error rate at intercept `beta`.
pub fn error_rate(beta: f64, alpha: f64, projections: &[f64], kind: ErrorKind) -> f64 {
    let sign = match kind {
        ErrorKind::FalsePositive => -1.0,
        ErrorKind::FalseNegative => 1.0,
    };
    projections
        .iter()
        .map(|&u| inverse_link(beta + sign * alpha * u))
        .sum::<f64>()
        / projections.len() as f64
}

/// Intercept whose mean error rate over `projections` hits `target`.
///
/// The rate is increasing in the intercept, so bisection on the bracket
/// `[-40, 40]` converges; it runs until the interval stops shrinking.
pub fn solve_beta(target: f64, alpha: f64, projections: &[f64], kind: ErrorKind) -> Result<f64> {
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::invalid(format!("target rate {target} outside (0, 1)")));
    }
    if projections.is_empty() {
        return Err(Error::invalid("calibration split has no rows of the relevant label"));
    }
    let f = |b: f64| error_rate(b, alpha, projections, kind) - target;
    let (mut lo, mut hi) = BETA_BRACKET;
    let (f_lo, f_hi) = (f(lo), f(hi));
    if f_lo > 0.0 || f_hi < 0.0 {
        return Err(Error::invalid(format!(
            "target rate {target} unreachable within the intercept bracket"
        )));
    }
    let mut best = if f_lo.abs() < f_hi.abs() { (lo, f_lo.abs()) } else { (hi, f_hi.abs()) };
    for _ in 0..BISECTION_MAX_ITER {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let v = f(mid);
        if v.abs() < best.1 {
            best = (mid, v.abs());
        }
        if v == 0.0 {
            break;
        }
        if v < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(best.0)
}

/// Sampling distributions for a team.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TeamSpec {
    pub n_experts: usize,
    pub seed: u64,
    /// `P(Z = 1)` of the spike-and-slab selector.
    pub slab_probability: f64,
    pub slab_sd: f64,
    pub w_m_mean: f64,
    pub w_m_sd: f64,
    pub w_p_mean: f64,
    pub w_p_sd: f64,
    pub alpha_mean: f64,
    pub alpha_sd: f64,
    /// Target cost standard deviation as a fraction of the classifier's cost.
    pub cost_sd_ratio: f64,
    /// Target cost cap as a fraction of the reject-all cost.
    pub cost_cap_ratio: f64,
    pub fnr_range: (f64, f64),
    pub fpr_valid_range: (f64, f64),
    pub max_tries: usize,
}

impl Default for TeamSpec {
    fn default() -> Self {
        Self {
            n_experts: 9,
            seed: 0,
            slab_probability: 0.3,
            slab_sd: 1.0,
            w_m_mean: -2.0,
            w_m_sd: 0.5,
            w_p_mean: -1.0,
            w_p_sd: 0.1,
            alpha_mean: 4.0,
            alpha_sd: 0.2,
            cost_sd_ratio: 0.2,
            cost_cap_ratio: 0.7,
            fnr_range: (0.05, 0.95),
            fpr_valid_range: (0.01, 0.99),
            max_tries: 100,
        }
    }
}

/// Preprocessed features, alert-model scores and labels of one split.
#[derive(Debug, Clone)]
pub struct ExpertView {
    pub x_bar: Matrix,
    pub model_scores: Vec<f64>,
    pub labels: Vec<bool>,
}

impl ExpertView {
    pub fn new(x_bar: Matrix, model_scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        ensure_len("features vs scores", x_bar.rows(), model_scores.len())?;
        ensure_len("features vs labels", x_bar.rows(), labels.len())?;
        Ok(Self {
            x_bar,
            model_scores,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn prevalence(&self) -> f64 {
        self.labels.iter().filter(|&&y| y).count() as f64 / self.len().max(1) as f64
    }

    pub fn projections(&self, params: &ExpertParams) -> Vec<f64> {
        (0..self.len())
            .map(|i| params.projection(self.x_bar.row(i), self.model_scores[i]))
            .collect()
    }

    /// Per-instance `(p_fp, p_fn)` vectors.
    pub fn error_probabilities(&self, params: &ExpertParams) -> (Vec<f64>, Vec<f64>) {
        self.projections(params)
            .into_iter()
            .map(|u| params.error_probabilities_at(u))
            .unzip()
    }

    pub fn expected_cost(&self, params: &ExpertParams, lambda: f64) -> f64 {
        let (fp, fnr) = self.error_probabilities(params);
        expected_cost(&fp, &fnr, &self.labels, lambda).unwrap_or(0.0)
    }
}

/// Sampled targets behind one expert's intercepts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertTargets {
    pub cost: f64,
    pub cost_capped: bool,
    pub fpr: f64,
    pub fnr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Team {
    pub experts: Vec<ExpertParams>,
    pub targets: Vec<ExpertTargets>,
    pub lambda: f64,
    /// Reject-all cost on the calibration split.
    pub reject_all_cost: f64,
    pub classifier_cost: f64,
}

impl Team {
    pub fn len(&self) -> usize {
        self.experts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.experts.is_empty()
    }
}

/// Dependence parameters `(w, w_M, α)` of each expert, drawn from the
/// weights stream only, so every scenario with the same seed shares them.
pub fn sample_dependence(spec: &TeamSpec, dim: usize, protected: usize) -> Result<Vec<ExpertParams>> {
    let normal = |m: f64, s: f64| Normal::new(m, s).map_err(|e| Error::Config(e.to_string()));
    let slab_sel = Bernoulli::new(spec.slab_probability).map_err(|e| Error::Config(e.to_string()))?;
    let slab = normal(0.0, spec.slab_sd)?;
    let w_m = normal(spec.w_m_mean, spec.w_m_sd)?;
    let w_p = normal(spec.w_p_mean, spec.w_p_sd)?;
    let alpha = normal(spec.alpha_mean, spec.alpha_sd)?;
    let mut rng = rng::stream(spec.seed, tags::TEAM_WEIGHTS);
    let mut out = Vec::with_capacity(spec.n_experts);
    for _ in 0..spec.n_experts {
        let mut w = vec![0.0; dim];
        for (k, wk) in w.iter_mut().enumerate() {
            *wk = if k == protected {
                w_p.sample(&mut rng)
            } else if slab_sel.sample(&mut rng) {
                slab.sample(&mut rng)
            } else {
                0.0
            };
        }
        let params = ExpertParams {
            w,
            w_m: w_m.sample(&mut rng),
            alpha: alpha.sample(&mut rng).max(0.0),
            beta0: 0.0,
            beta1: 0.0,
        };
        params.validate()?;
        out.push(params);
    }
    Ok(out)
}

/// Generates a team calibrated on `calibration`.
///
/// `classifier_cost` is the classifier's expected cost per instance on the
/// same split; each expert's target cost is drawn around it and capped at
/// `cost_cap_ratio` of the reject-all cost.
pub fn generate_team(
    spec: &TeamSpec,
    calibration: &ExpertView,
    lambda: f64,
    classifier_cost: f64,
    protected: usize,
) -> Result<Team> {
    if spec.n_experts == 0 {
        return Err(Error::Config("a team needs at least one expert".into()));
    }
    let p = calibration.prevalence();
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Degenerate(
            "calibration split must contain both labels".into(),
        ));
    }
    let reject_all = lambda * (1.0 - p);
    let cap = spec.cost_cap_ratio * reject_all;
    let mut experts = sample_dependence(spec, calibration.x_bar.cols(), protected)?;

    let cost_dist = Normal::new(classifier_cost, spec.cost_sd_ratio * classifier_cost.abs())
        .map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = rng::stream(spec.seed ^ lambda.to_bits(), tags::TEAM_COSTS);
    let mut targets = Vec::with_capacity(experts.len());
    for params in &mut experts {
        let mut cost = cost_dist.sample(&mut rng);
        let capped = cost > cap;
        if capped {
            cost = cap;
        }
        // a non-positive draw would leave no valid (FPR, FNR) pair
        cost = cost.max(1e-3 * reject_all);
        let (fpr, fnr) = sample_rates(spec, cost, lambda, p, &mut rng)?;

        let u = calibration.projections(params);
        let (neg_u, pos_u): (Vec<(f64, bool)>, Vec<(f64, bool)>) = u
            .into_iter()
            .zip(calibration.labels.iter().copied())
            .partition(|(_, y)| !*y);
        let neg_u: Vec<f64> = neg_u.into_iter().map(|(v, _)| v).collect();
        let pos_u: Vec<f64> = pos_u.into_iter().map(|(v, _)| v).collect();
        params.beta0 = solve_beta(fpr, params.alpha, &neg_u, ErrorKind::FalsePositive)?;
        params.beta1 = solve_beta(fnr, params.alpha, &pos_u, ErrorKind::FalseNegative)?;
        targets.push(ExpertTargets {
            cost,
            cost_capped: capped,
            fpr,
            fnr,
        });
    }
    Ok(Team {
        experts,
        targets,
        lambda,
        reject_all_cost: reject_all,
        classifier_cost,
    })
}

/// Draws `T_FNR` uniformly on the part of `fnr_range` whose induced `T_FPR`
/// lies in `fpr_valid_range`; equivalent to rejection sampling from the full
/// range. Falls back to the whole open unit interval when that part is empty.
fn sample_rates(spec: &TeamSpec, cost: f64, lambda: f64, p: f64, rng: &mut Rng) -> Result<(f64, f64)> {
    let denom = lambda * (1.0 - p);
    // FNR range inducing FPR inside (fpr_lo, fpr_hi)
    let fnr_for_fpr = |fpr: f64| (cost - fpr * denom) / p;
    let (fpr_lo, fpr_hi) = spec.fpr_valid_range;
    let feasible = (fnr_for_fpr(fpr_hi), fnr_for_fpr(fpr_lo));
    let mut lo = feasible.0.max(spec.fnr_range.0);
    let mut hi = feasible.1.min(spec.fnr_range.1);
    if lo >= hi {
        lo = feasible.0.max(1e-3);
        hi = feasible.1.min(1.0 - 1e-3);
    }
    if lo >= hi {
        return Err(Error::SamplingExhausted {
            tries: 0,
            reason: format!("no (FPR, FNR) pair reaches target cost {cost}"),
        });
    }
    let dist = Uniform::new(lo, hi).map_err(|e| Error::Config(e.to_string()))?;
    for _ in 0..spec.max_tries.max(1) {
        let fnr = dist.sample(rng);
        let fpr = target_fpr_from_cost(cost, fnr, lambda, p);
        if fpr > 0.0 && fpr < 1.0 && fnr > 0.0 && fnr < 1.0 {
            return Ok((fpr, fnr));
        }
    }
    Err(Error::SamplingExhausted {
        tries: spec.max_tries,
        reason: format!("target cost {cost}"),
    })
}

/// One stochastic decision per instance: flip the label with the expert's
/// error probability for that label.
pub fn sample_decisions(params: &ExpertParams, view: &ExpertView, rng: &mut Rng) -> Vec<bool> {
    (0..view.len())
        .map(|i| {
            let u = params.projection(view.x_bar.row(i), view.model_scores[i]);
            let (p_fp, p_fn) = params.error_probabilities_at(u);
            let draw: f64 = rng.random();
            let y = view.labels[i];
            if y {
                draw >= p_fn
            } else {
                draw < p_fp
            }
        })
        .collect()
}

/// Decisions of every expert on every instance of `view`, one row per
/// instance. Expert `j` draws from its own stream derived from `(seed, j)`.
pub fn sample_team_decisions(team: &Team, view: &ExpertView, seed: u64) -> Vec<Vec<bool>> {
    let per_expert: Vec<Vec<bool>> = team
        .experts
        .iter()
        .enumerate()
        .map(|(j, params)| {
            let mut rng = rng::stream(rng::derive_seed(seed, tags::DECISIONS), j as u64 + 1);
            sample_decisions(params, view, &mut rng)
        })
        .collect();
    (0..view.len())
        .map(|i| per_expert.iter().map(|d| d[i]).collect())
        .collect()
}

/// Fraction of cases where `a` is correct and `b` is not.
pub fn complementarity_counts(pred_a: &[bool], pred_b: &[bool], labels: &[bool]) -> Result<f64> {
    ensure_len("pred_a vs labels", pred_a.len(), labels.len())?;
    ensure_len("pred_b vs labels", pred_b.len(), labels.len())?;
    if labels.is_empty() {
        return Ok(0.0);
    }
    let count = pred_a
        .iter()
        .zip(pred_b)
        .zip(labels)
        .filter(|((&a, &b), &y)| a == y && b != y)
        .count();
    Ok(count as f64 / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::Instance;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn params(alpha: f64, beta0: f64, beta1: f64) -> ExpertParams {
        ExpertParams {
            w: vec![1.0, 0.0],
            w_m: 0.0,
            alpha,
            beta0,
            beta1,
        }
    }

    #[test]
    fn error_probability_examples() {
        let p = params(0.0, 0.3, -1.2);
        for x in [[0.4, 0.1], [-0.5, 0.2]] {
            let (fp, fnr) = error_probabilities(&p, &x, 0.7).unwrap();
            assert_relative_eq!(fp, inverse_link(0.3));
            assert_relative_eq!(fnr, inverse_link(-1.2));
        }
        // u = 0.25 with unit-norm weights
        let p = params(4.0, 0.0, 0.0);
        let (fp, fnr) = error_probabilities(&p, &[0.25, 0.0], 0.0).unwrap();
        assert_relative_eq!(fp, 0.268_941_421_369_995, epsilon = 1e-12);
        assert_relative_eq!(fnr, 0.731_058_578_630_005, epsilon = 1e-12);
        let (fp2, fnr2) = error_probabilities(&p, &[-0.25, 0.0], 0.0).unwrap();
        assert_relative_eq!(fp2, fnr, epsilon = 1e-15);
        assert_relative_eq!(fnr2, fp, epsilon = 1e-15);

        let zero = ExpertParams { w: vec![0.0, 0.0], w_m: 0.0, ..p };
        assert!(error_probabilities(&zero, &[0.1, 0.1], 0.5).is_err());
    }

    #[test]
    fn expected_cost_examples() {
        // constant rates: λ(1−p)FPR + p FNR with λ=0.5, p=0.2, FPR=0.1, FNR=0.3
        let labels: Vec<bool> = (0..10).map(|i| i < 2).collect();
        let fp = vec![0.1; 10];
        let fnr = vec![0.3; 10];
        assert_relative_eq!(expected_cost(&fp, &fnr, &labels, 0.5).unwrap(), 0.10, epsilon = 1e-15);
        assert_eq!(expected_cost(&[0.0; 10], &[0.0; 10], &labels, 0.5).unwrap(), 0.0);
        // reject all: FPR 1, FNR 0
        assert_relative_eq!(expected_cost(&[1.0; 10], &[0.0; 10], &labels, 0.5).unwrap(), 0.5 * 0.8);
    }

    #[test]
    fn iso_cost_line_examples() {
        let (lambda, p) = (0.057, 0.12);
        assert_relative_eq!(target_fpr_from_cost(lambda * (1.0 - p), 0.0, lambda, p), 1.0, epsilon = 1e-12);
        assert_relative_eq!(target_fpr_from_cost(p, 1.0, lambda, p), 0.0, epsilon = 1e-12);
        // (0.03 − 0.012) / 0.05016
        assert_relative_eq!(target_fpr_from_cost(0.03, 0.1, lambda, p), 0.358_851_674_641_148, epsilon = 1e-12);
    }

    #[test]
    fn bisection_closed_forms() {
        let u = [0.3, -0.2, 0.1];
        let b = solve_beta(0.25, 0.0, &u, ErrorKind::FalsePositive).unwrap();
        assert_relative_eq!(b, (0.25f64 / 0.75).ln(), epsilon = 1e-9);
        assert_relative_eq!(b, -1.098_612_288_668_11, epsilon = 1e-9);
        let b = solve_beta(0.5, 0.0, &u, ErrorKind::FalseNegative).unwrap();
        assert!(b.abs() < 1e-12);
        assert!(solve_beta(0.0, 1.0, &u, ErrorKind::FalsePositive).is_err());
        assert!(solve_beta(0.3, 1.0, &[], ErrorKind::FalsePositive).is_err());
    }

    #[test]
    fn bisection_hits_target_with_feature_term() {
        let mut rng = rng::from_seed(11);
        let u: Vec<f64> = (0..500).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        for kind in [ErrorKind::FalsePositive, ErrorKind::FalseNegative] {
            let b = solve_beta(0.3, 4.0, &u, kind).unwrap();
            assert!((error_rate(b, 4.0, &u, kind) - 0.3).abs() <= 1e-6);
            // monotone on a grid
            let rates: Vec<f64> = (-40..=40).map(|k| error_rate(k as f64, 4.0, &u, kind)).collect();
            assert!(rates.windows(2).all(|w| w[1] >= w[0]));
        }
    }

    #[test]
    fn complementarity_examples() {
        let y = [true, false, true, true, false, false, true, false, true, false];
        assert_eq!(complementarity_counts(&y, &y, &y).unwrap(), 0.0);
        let wrong: Vec<bool> = y.iter().map(|v| !v).collect();
        assert_eq!(complementarity_counts(&y, &wrong, &y).unwrap(), 1.0);
        // hand count: a correct on rows 0..6, b correct on rows 0,1,2 and 7,8,9 → a-only rows 3,4,5
        let a = [true, false, true, true, false, false, false, true, false, true];
        let b = [true, false, true, false, true, true, false, false, true, false];
        assert_relative_eq!(complementarity_counts(&a, &b, &y).unwrap(), 0.3);
    }

    fn toy_dataset() -> Dataset {
        // column 0 numeric, column 1 categorical with prevalences c7: 0/3, c2: 1/3, c5: 2/3, c9: 3/3
        let cats = [7, 2, 5, 9];
        let mut rows = Vec::new();
        for (ci, &c) in cats.iter().enumerate() {
            for r in 0..3 {
                rows.push(Instance {
                    id: rows.len() as u64,
                    features: vec![rows.len() as f64, c as f64],
                    label: r < ci,
                    weight: 1.0,
                    batch: 0,
                });
            }
        }
        Dataset::new(rows).unwrap()
    }

    #[test]
    fn preprocessing_on_toy_table() {
        let ds = toy_dataset();
        let schema = FeatureSchema { categorical: vec![1], protected: 0 };
        let spec = PreprocessSpec::fit(&ds, &schema).unwrap();
        let m = spec.transform(&ds).unwrap();
        // 12 rows, three per category; ranks 0..3 over 4 categories, mean 0.375
        let expected = [-0.375, -0.125, 0.125, 0.375];
        for (ci, e) in expected.iter().enumerate() {
            for r in 0..3 {
                assert_relative_eq!(m.get(ci * 3 + r, 1), *e, epsilon = 1e-15);
            }
        }
        let col_mean: f64 = (0..12).map(|r| m.get(r, 1)).sum::<f64>() / 12.0;
        assert!(col_mean.abs() < 1e-15);
        // numeric: min → 1/13 − 0.5, values stay within [−0.5, 0.5]
        assert_relative_eq!(m.get(0, 0), 1.0 / 13.0 - 0.5);
        let mut out = [0.0; 2];
        spec.transform_row(&[1e9, 123.0], &mut out);
        assert!(out[0] <= 0.5 && out[1] == 0.0);
        let text = crate::persist::to_string("preprocess", &spec).unwrap();
        assert_eq!(crate::persist::from_str::<PreprocessSpec>("preprocess", &text).unwrap(), spec);
    }

    #[test]
    fn median_maps_to_zero() {
        let ds = Dataset::new(
            (0..7)
                .map(|i| Instance { id: i, features: vec![(i * i) as f64], label: i % 2 == 0, weight: 1.0, batch: 0 })
                .collect(),
        )
        .unwrap();
        let spec = PreprocessSpec::fit(&ds, &FeatureSchema { categorical: vec![], protected: 0 }).unwrap();
        let mut out = [0.0];
        spec.transform_row(&[9.0], &mut out);
        assert_eq!(out[0], 0.0);
    }

    #[test]
    fn decision_sampling_extremes() {
        let labels: Vec<bool> = (0..50).map(|i| i % 3 == 0).collect();
        let view = ExpertView::new(Matrix::zeros(50, 2), vec![0.0; 50], labels.clone()).unwrap();
        let mut rng = rng::from_seed(3);
        let perfect = params(0.0, -200.0, -200.0);
        assert_eq!(sample_decisions(&perfect, &view, &mut rng), labels);
        let flipper = params(0.0, 200.0, 200.0);
        let flipped: Vec<bool> = labels.iter().map(|v| !v).collect();
        assert_eq!(sample_decisions(&flipper, &view, &mut rng), flipped);
    }

    #[test]
    fn fair_coin_flip_rate() {
        let n = 100_000;
        let labels: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let view = ExpertView::new(Matrix::zeros(n, 2), vec![0.0; n], labels.clone()).unwrap();
        let coin = params(0.0, 0.0, 0.0);
        let d = sample_decisions(&coin, &view, &mut rng::from_seed(5));
        let flips = d.iter().zip(&labels).filter(|(a, b)| a != b).count() as f64 / n as f64;
        assert!((flips - 0.5).abs() <= 0.005, "{flips}");
    }

    fn random_view(n: usize, d: usize, prevalence: f64, seed: u64) -> ExpertView {
        let mut rng = rng::from_seed(seed);
        let mut x = Matrix::zeros(n, d);
        for r in 0..n {
            for c in 0..d {
                x.set(r, c, rng.random::<f64>() - 0.5);
            }
        }
        let scores = (0..n).map(|_| rng.random::<f64>()).collect();
        let labels = (0..n).map(|_| rng.random::<f64>() < prevalence).collect();
        ExpertView::new(x, scores, labels).unwrap()
    }

    #[test]
    fn team_generation_properties() {
        let view = random_view(2000, 6, 0.12, 9);
        let lambda = 0.057;
        let reject_all = lambda * (1.0 - view.prevalence());
        let spec = TeamSpec { seed: 4, ..TeamSpec::default() };
        let team = generate_team(&spec, &view, lambda, 0.6 * reject_all, 2).unwrap();
        assert_eq!(team.len(), 9);
        for (params, target) in team.experts.iter().zip(&team.targets) {
            let realized = view.expected_cost(params, lambda);
            assert!((realized - target.cost).abs() <= 0.05 * target.cost);
            assert!(realized <= 0.7 * reject_all + 1e-9);
        }
        let mut intercepts: Vec<f64> = team.experts.iter().map(|p| p.beta0).collect();
        intercepts.sort_by(f64::total_cmp);
        intercepts.dedup();
        assert_eq!(intercepts.len(), 9);
        // determinism
        assert_eq!(generate_team(&spec, &view, lambda, 0.6 * reject_all, 2).unwrap(), team);
        // dependence parameters are shared across cost structures
        let other = generate_team(&spec, &view, 0.285, 0.6 * 0.285 * (1.0 - view.prevalence()), 2).unwrap();
        for (a, b) in team.experts.iter().zip(&other.experts) {
            assert_eq!(a.w, b.w);
            assert_eq!(a.alpha, b.alpha);
        }
    }

    #[test]
    fn cost_cap_binds() {
        let view = random_view(1500, 4, 0.1, 2);
        let lambda = 0.057;
        let reject_all = lambda * (1.0 - view.prevalence());
        let team = generate_team(&TeamSpec::default(), &view, lambda, 5.0 * reject_all, 0).unwrap();
        for (params, t) in team.experts.iter().zip(&team.targets) {
            assert!(t.cost_capped);
            assert_relative_eq!(t.cost, 0.7 * reject_all, epsilon = 1e-15);
            assert!(view.expected_cost(params, lambda) <= 0.7 * reject_all + 1e-9);
        }
    }

    proptest! {
        #[test]
        fn projection_is_scale_invariant(
            w in prop::collection::vec(-3.0f64..3.0, 4),
            w_m in 0.1f64..3.0,
            x in prop::collection::vec(-0.5f64..0.5, 4),
            m in 0.0f64..1.0,
            kappa in 0.01f64..100.0,
        ) {
            let a = ExpertParams { w: w.clone(), w_m, alpha: 4.0, beta0: 0.2, beta1: -0.3 };
            let b = ExpertParams { w: w.iter().map(|v| v * kappa).collect(), w_m: w_m * kappa, ..a.clone() };
            let (fa, na) = error_probabilities(&a, &x, m).unwrap();
            let (fb, nb) = error_probabilities(&b, &x, m).unwrap();
            prop_assert!((fa - fb).abs() < 1e-12 && (na - nb).abs() < 1e-12);
        }
    }
}
