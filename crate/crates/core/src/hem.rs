//! Human expertise model: one scorer over (features, expert index, model
//! score) estimating the probability that an expert decides correctly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data_model::{weight_for, CostStructure, Dataset, ExpertRecord, Matrix};
use crate::error::{ensure_len, Error, Result};
use crate::expert_sim::PreprocessSpec;
use crate::persist;
use crate::scorer::{self, inverse_link, Scorer, SearchGrid, SearchOutcome, Split, TrainConfig};

/// One training row per expert record.
#[derive(Debug, Clone, PartialEq)]
pub struct HemTrainingRow {
    /// Raw features of the instance.
    pub features: Vec<f64>,
    /// Expert index in `1..=J`.
    pub expert_id: usize,
    pub model_score: f64,
    /// The expert's decision matched the label.
    pub target: bool,
    pub weight: f64,
}

/// Rows from a history of expert decisions on `dataset`.
pub fn build_hem_rows(
    dataset: &Dataset,
    records: &[ExpertRecord],
    model_scores: &[f64],
    cost: CostStructure,
) -> Result<Vec<HemTrainingRow>> {
    ensure_len("instances vs model scores", dataset.len(), model_scores.len())?;
    let index = dataset.id_index();
    records
        .iter()
        .map(|r| {
            let &pos = index.get(&r.instance_id).ok_or_else(|| {
                Error::invalid(format!("expert record references unknown instance {}", r.instance_id))
            })?;
            let inst = dataset.get(pos);
            Ok(HemTrainingRow {
                features: inst.features.clone(),
                expert_id: r.expert_id,
                model_score: model_scores[pos],
                target: r.prediction == inst.label,
                weight: weight_for(inst.label, cost),
            })
        })
        .collect()
}

/// Input layout of the HEM scorer.
///
/// The base block is `[x̄, m]` (the score only when `include_score`),
/// followed by the one-hot expert index. With `interactions`, a copy of the
/// base block per expert is appended, non-zero only in the row's expert slot,
/// so each expert gets its own slopes while the base block stays shared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HemEncoding {
    pub include_score: bool,
    pub interactions: bool,
    /// Keep the shared base block; turning it off with `interactions` on
    /// leaves only per-expert columns.
    pub shared: bool,
}

impl Default for HemEncoding {
    fn default() -> Self {
        Self {
            include_score: true,
            interactions: true,
            shared: true,
        }
    }
}

impl HemEncoding {
    fn base_dim(&self, n_features: usize) -> usize {
        n_features + usize::from(self.include_score)
    }

    pub fn width(&self, n_features: usize, n_experts: usize) -> usize {
        let base = self.base_dim(n_features);
        let shared = if self.shared { base } else { 0 };
        let inter = if self.interactions { n_experts * base } else { 0 };
        shared + n_experts + inter
    }

    /// Writes the encoding of one row into `out` (length [`Self::width`]).
    pub fn encode(&self, x_bar: &[f64], model_score: f64, expert_id: usize, n_experts: usize, out: &mut [f64]) {
        out.fill(0.0);
        let base = self.base_dim(x_bar.len());
        let write_base = |dst: &mut [f64]| {
            dst[..x_bar.len()].copy_from_slice(x_bar);
            if self.include_score {
                dst[x_bar.len()] = model_score;
            }
        };
        let mut at = 0;
        if self.shared {
            write_base(&mut out[..base]);
            at = base;
        }
        out[at + expert_id - 1] = 1.0;
        at += n_experts;
        if self.interactions {
            let start = at + (expert_id - 1) * base;
            write_base(&mut out[start..start + base]);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HemConfig {
    pub encoding: HemEncoding,
    pub train: TrainConfig,
    pub grid: SearchGrid,
}

impl Default for HemConfig {
    fn default() -> Self {
        let train = TrainConfig::linear();
        Self {
            encoding: HemEncoding::default(),
            grid: SearchGrid::for_family(train.family),
            train,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hem {
    pub scorer: Scorer,
    pub preprocess: PreprocessSpec,
    pub n_experts: usize,
    pub encoding: HemEncoding,
}

impl Hem {
    /// Fits the HEM on `train`, choosing hyperparameters by weighted log-loss
    /// on `validation` (the training loss when it is empty).
    pub fn train(
        train: &[HemTrainingRow],
        validation: &[HemTrainingRow],
        preprocess: PreprocessSpec,
        n_experts: usize,
        config: &HemConfig,
    ) -> Result<(Self, SearchOutcome)> {
        if train.is_empty() {
            return Err(Error::Degenerate("no expert records to train the HEM".into()));
        }
        let tx = design(train, &preprocess, n_experts, config.encoding)?;
        let vx = design(validation, &preprocess, n_experts, config.encoding)?;
        let (ty, tw): (Vec<bool>, Vec<f64>) = train.iter().map(|r| (r.target, r.weight)).unzip();
        let (vy, vw): (Vec<bool>, Vec<f64>) = validation.iter().map(|r| (r.target, r.weight)).unzip();
        let (scorer, outcome) = scorer::select(
            &Split { x: &tx, targets: &ty, weights: &tw },
            &Split { x: &vx, targets: &vy, weights: &vw },
            &config.train,
            &config.grid,
        )?;
        let hem = Self {
            scorer,
            preprocess,
            n_experts,
            encoding: config.encoding,
        };
        Ok((hem, outcome))
    }

    /// `P̂(expert j decides correctly | x)` from raw features.
    pub fn correctness_probability(&self, x: &[f64], expert_id: usize, model_score: f64) -> Result<f64> {
        self.check_expert(expert_id)?;
        let mut x_bar = vec![0.0; self.preprocess.dim()];
        self.preprocess.transform_row(x, &mut x_bar);
        let mut z = vec![0.0; self.scorer.dim];
        self.encoding.encode(&x_bar, model_score, expert_id, self.n_experts, &mut z);
        Ok(inverse_link(self.scorer.score(&z)))
    }

    /// `n × J` matrix of correctness probabilities; column `j − 1` is expert `j`.
    pub fn correctness_matrix(&self, dataset: &Dataset, model_scores: &[f64]) -> Result<Matrix> {
        ensure_len("instances vs model scores", dataset.len(), model_scores.len())?;
        let mut out = Matrix::zeros(dataset.len(), self.n_experts);
        let mut x_bar = vec![0.0; self.preprocess.dim()];
        let mut z = vec![0.0; self.scorer.dim];
        for (i, inst) in dataset.iter().enumerate() {
            self.preprocess.transform_row(&inst.features, &mut x_bar);
            for j in 1..=self.n_experts {
                self.encoding.encode(&x_bar, model_scores[i], j, self.n_experts, &mut z);
                out.set(i, j - 1, inverse_link(self.scorer.score(&z)));
            }
        }
        Ok(out)
    }

    fn check_expert(&self, expert_id: usize) -> Result<()> {
        if expert_id == 0 || expert_id > self.n_experts {
            return Err(Error::invalid(format!(
                "expert id {expert_id} outside 1..={}",
                self.n_experts
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        persist::save("hem", self, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        persist::load("hem", path)
    }
}

fn design(rows: &[HemTrainingRow], preprocess: &PreprocessSpec, n_experts: usize, encoding: HemEncoding) -> Result<Matrix> {
    let d = preprocess.dim();
    let width = encoding.width(d, n_experts);
    let mut m = Matrix::zeros(rows.len(), width);
    let mut x_bar = vec![0.0; d];
    for (r, row) in rows.iter().enumerate() {
        if row.expert_id == 0 || row.expert_id > n_experts {
            return Err(Error::invalid(format!(
                "expert id {} outside 1..={n_experts}",
                row.expert_id
            )));
        }
        if row.features.len() != d {
            return Err(Error::invalid(format!(
                "HEM row has {} features, preprocessing expects {d}",
                row.features.len()
            )));
        }
        preprocess.transform_row(&row.features, &mut x_bar);
        encoding.encode(&x_bar, row.model_score, row.expert_id, n_experts, m.row_mut(r));
    }
    Ok(m)
}
