//! Comparison strategies: one-vs-all multi-expert deferral, random
//! assignment under capacities, only-classifier and full rejection.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data_model::{CapacityMode, CapacitySpec, Dataset, Matrix};
use crate::error::{ensure_len, Error, Result};
use crate::expert_sim::PreprocessSpec;
use crate::hem::HemTrainingRow;
use crate::persist;
use crate::rng::Rng;
use crate::scorer::{self, inverse_link, Scorer, SearchGrid, Split, TrainConfig};

/// `Φ(z) = ln(1 + e^{−z})`.
fn phi(z: f64) -> f64 {
    if z > 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

/// The one-vs-all deferral surrogate for one instance.
///
/// `class_scores[c]` is the score of class `c`, `rejector_scores[j]` that of
/// expert `j`'s head and `expert_agreements[j]` whether expert `j` predicted
/// `label`.
pub fn ova_surrogate(class_scores: &[f64], label: usize, rejector_scores: &[f64], expert_agreements: &[bool]) -> Result<f64> {
    ensure_len("rejector scores vs agreements", rejector_scores.len(), expert_agreements.len())?;
    if label >= class_scores.len() {
        return Err(Error::invalid(format!("label {label} has no class score")));
    }
    let mut total = phi(class_scores[label]);
    total += class_scores
        .iter()
        .enumerate()
        .filter(|(c, _)| *c != label)
        .map(|(_, &g)| phi(-g))
        .sum::<f64>();
    for (&g, &agree) in rejector_scores.iter().zip(expert_agreements) {
        total += phi(-g);
        if agree {
            total += phi(g) - phi(-g);
        }
    }
    Ok(total)
}

/// Shared classifier plus one correctness head per expert.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OvaModel {
    pub classifier: Scorer,
    pub heads: Vec<Scorer>,
    pub preprocess: PreprocessSpec,
}

fn head_inputs(rows: &[&HemTrainingRow], preprocess: &PreprocessSpec) -> Matrix {
    let d = preprocess.dim();
    let mut m = Matrix::zeros(rows.len(), d + 1);
    for (r, row) in rows.iter().enumerate() {
        let out = m.row_mut(r);
        preprocess.transform_row(&row.features, &mut out[..d]);
        out[d] = row.model_score;
    }
    m
}

impl OvaModel {
    /// Trains head `j` on expert `j`'s records only, with the cost weights
    /// carried by the rows.
    pub fn train(
        classifier: Scorer,
        train: &[HemTrainingRow],
        validation: &[HemTrainingRow],
        preprocess: PreprocessSpec,
        n_experts: usize,
        base: &TrainConfig,
        grid: &SearchGrid,
    ) -> Result<Self> {
        let mut heads = Vec::with_capacity(n_experts);
        for j in 1..=n_experts {
            let tr: Vec<&HemTrainingRow> = train.iter().filter(|r| r.expert_id == j).collect();
            if tr.is_empty() {
                return Err(Error::Degenerate(format!("expert {j} has no training records")));
            }
            let va: Vec<&HemTrainingRow> = validation.iter().filter(|r| r.expert_id == j).collect();
            let (tx, vx) = (head_inputs(&tr, &preprocess), head_inputs(&va, &preprocess));
            let (ty, tw): (Vec<bool>, Vec<f64>) = tr.iter().map(|r| (r.target, r.weight)).unzip();
            let (vy, vw): (Vec<bool>, Vec<f64>) = va.iter().map(|r| (r.target, r.weight)).unzip();
            let (head, _) = scorer::select(
                &Split { x: &tx, targets: &ty, weights: &tw },
                &Split { x: &vx, targets: &vy, weights: &vw },
                base,
                grid,
            )?;
            heads.push(head);
        }
        Ok(Self {
            classifier,
            heads,
            preprocess,
        })
    }

    pub fn n_experts(&self) -> usize {
        self.heads.len()
    }

    /// `n × (J + 1)`: `max(p, 1 − p)` of the classifier, then each head's
    /// probability.
    pub fn head_matrix(&self, dataset: &Dataset, model_scores: &[f64]) -> Result<Matrix> {
        ensure_len("instances vs model scores", dataset.len(), model_scores.len())?;
        let d = self.preprocess.dim();
        let mut z = vec![0.0; d + 1];
        let mut out = Matrix::zeros(dataset.len(), self.heads.len() + 1);
        for (i, inst) in dataset.iter().enumerate() {
            let p = self.classifier.probability(&inst.features);
            out.set(i, 0, p.max(1.0 - p));
            self.preprocess.transform_row(&inst.features, &mut z[..d]);
            z[d] = model_scores[i];
            for (j, head) in self.heads.iter().enumerate() {
                out.set(i, j + 1, inverse_link(head.score(&z)));
            }
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        persist::save("ova-model", self, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        persist::load("ova-model", path)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum GreedyOrder {
    #[default]
    AscendingId,
    /// Most confident rows (largest top head probability) first.
    DescendingConfidence,
}

fn check_capacities(n: usize, capacities: &[i64], mode: CapacityMode) -> Result<()> {
    if capacities.iter().any(|&c| c < 0) {
        return Err(Error::Infeasible("negative capacity".into()));
    }
    let total: i64 = capacities.iter().sum();
    let ok = match mode {
        CapacityMode::Equality => total == n as i64,
        CapacityMode::UpperBound => total >= n as i64,
    };
    if !ok {
        return Err(Error::Infeasible(format!("capacities sum to {total} for {n} instances")));
    }
    Ok(())
}

/// Greedy OvA assignment of one batch. `probs` rows are in processing order
/// for [`GreedyOrder::AscendingId`]; each row goes to the highest-scoring
/// decision-maker that still has capacity (lowest index on ties).
pub fn ova_assign(probs: &Matrix, capacities: &[i64], mode: CapacityMode, order: GreedyOrder) -> Result<Vec<usize>> {
    ensure_len("capacities vs decision-makers", capacities.len(), probs.cols())?;
    check_capacities(probs.rows(), capacities, mode)?;
    let mut rows: Vec<usize> = (0..probs.rows()).collect();
    if order == GreedyOrder::DescendingConfidence {
        let top = |r: usize| probs.row(r).iter().copied().fold(f64::MIN, f64::max);
        rows.sort_by(|&a, &b| top(b).total_cmp(&top(a)).then(a.cmp(&b)));
    }
    let mut remaining = capacities.to_vec();
    let mut out = vec![0usize; probs.rows()];
    for r in rows {
        let row = probs.row(r);
        let best = (0..row.len())
            .filter(|&k| remaining[k] > 0)
            .fold(None, |acc: Option<usize>, k| match acc {
                Some(b) if row[b] >= row[k] => Some(b),
                _ => Some(k),
            })
            .ok_or_else(|| Error::Infeasible("capacities exhausted".into()))?;
        remaining[best] -= 1;
        out[r] = best;
    }
    Ok(out)
}

/// Uniformly random assignment with exact counts (equality mode), by
/// shuffling the multiset of capacity slots; in upper-bound mode the first
/// `n` shuffled slots are used.
pub fn random_assign(n: usize, capacities: &[i64], mode: CapacityMode, rng: &mut Rng) -> Result<Vec<usize>> {
    check_capacities(n, capacities, mode)?;
    let mut slots: Vec<usize> = capacities
        .iter()
        .enumerate()
        .flat_map(|(k, &c)| std::iter::repeat_n(k, c as usize))
        .collect();
    slots.shuffle(rng);
    slots.truncate(n);
    Ok(slots)
}

/// Runs a per-batch strategy over `spec`; rows of each batch are passed in
/// ascending instance-id order.
pub fn assign_per_batch(
    dataset: &Dataset,
    spec: &CapacitySpec,
    mut strategy: impl FnMut(&[usize], &[i64]) -> Result<Vec<usize>>,
) -> Result<Vec<usize>> {
    let mut out = vec![0usize; dataset.len()];
    for (b, mut members) in spec.batches(dataset)?.into_iter().enumerate() {
        members.sort_by_key(|&pos| dataset.get(pos).id);
        let a = strategy(&members, &spec.capacities[b])?;
        ensure_len("batch assignment", a.len(), members.len())?;
        for (&pos, k) in members.iter().zip(a) {
            out[pos] = k;
        }
    }
    Ok(out)
}

pub fn ova_assign_batches(head_probs: &Matrix, dataset: &Dataset, spec: &CapacitySpec, order: GreedyOrder) -> Result<Vec<usize>> {
    assign_per_batch(dataset, spec, |members, caps| {
        ova_assign(&head_probs.select_rows(members), caps, spec.mode, order)
    })
}

pub fn random_assign_batches(dataset: &Dataset, spec: &CapacitySpec, rng: &mut Rng) -> Result<Vec<usize>> {
    assign_per_batch(dataset, spec, |members, caps| random_assign(members.len(), caps, spec.mode, rng))
}

/// Every alert is declared positive.
pub fn full_rejection(n: usize) -> Vec<bool> {
    vec![true; n]
}

pub fn only_classifier(classifier: &Scorer, dataset: &Dataset) -> Vec<bool> {
    dataset.iter().map(|i| classifier.predict_class(&i.features)).collect()
}
