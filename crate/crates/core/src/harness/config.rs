//! Run configuration, read from TOML. Every section has defaults, so an
//! empty file describes the full six-scenario grid.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::synthetic::SyntheticDataSpec;
use crate::baselines::GreedyOrder;
use crate::data_model::CapacityMode;
use crate::error::{Error, Result};
use crate::expert_sim::{FeatureSchema, TeamSpec};
use crate::hem::HemConfig;
use crate::scorer::{LearnerFamily, SearchGrid, TrainConfig};

/// Environment variable that overrides the output root.
pub const OUTPUT_ROOT_ENV: &str = "DEFERRAL_OUTPUT_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_root: String,
    pub data: SyntheticDataSpec,
    pub grid: ScenarioGrid,
    pub splits: SplitConfig,
    pub team: TeamSpec,
    pub models: ModelConfig,
    /// Column of the protected attribute in the feature vector.
    pub protected_feature: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 2024,
            output_root: "runs".into(),
            data: SyntheticDataSpec::default(),
            grid: ScenarioGrid::default(),
            splits: SplitConfig::default(),
            team: TeamSpec::default(),
            models: ModelConfig::default(),
            protected_feature: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioGrid {
    /// Validation FPR targets of the alert model; each fixes an alert rate.
    pub alert_fprs: Vec<f64>,
    /// Cost ratio implied by the alert threshold.
    pub lambda_t: f64,
    /// Scenario cost ratios are `lambda_t` times each multiplier.
    pub lambda_multipliers: Vec<f64>,
    pub n_training_seeds: usize,
    /// One uniform setting plus sampled ones.
    pub n_capacity_settings: usize,
    /// Fractions of the expert history used in every scenario.
    pub data_fractions: Vec<f64>,
    /// Extra fractions run for the `lambda_t` scenarios only.
    pub ablation_fractions: Vec<f64>,
    pub capacity_mode: CapacityMode,
    pub greedy_order: GreedyOrder,
}

impl Default for ScenarioGrid {
    fn default() -> Self {
        Self {
            alert_fprs: vec![0.05, 0.15],
            lambda_t: 0.057,
            lambda_multipliers: vec![0.2, 1.0, 5.0],
            n_training_seeds: 5,
            n_capacity_settings: 5,
            data_fractions: vec![1.0],
            ablation_fractions: vec![0.25, 0.5],
            capacity_mode: CapacityMode::Equality,
            greedy_order: GreedyOrder::AscendingId,
        }
    }
}

/// Month ranges (inclusive) of each stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub alert_train: [usize; 2],
    pub alert_validation: [usize; 2],
    pub deferral_train: [usize; 2],
    pub deferral_validation: [usize; 2],
    pub test: [usize; 2],
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            alert_train: [0, 2],
            alert_validation: [3, 3],
            deferral_train: [3, 5],
            deferral_validation: [6, 6],
            test: [7, 7],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub alert: TrainConfig,
    pub alert_grid: SearchGrid,
    pub classifier: TrainConfig,
    pub classifier_grid: SearchGrid,
    pub hem: HemConfig,
    pub ova_head: TrainConfig,
    pub ova_grid: SearchGrid,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let linear = TrainConfig::linear();
        Self {
            alert: TrainConfig::stumps(),
            alert_grid: SearchGrid {
                learning_rates: vec![0.1, 0.3],
                l2: vec![1.0],
                initial_offsets: vec![0.0],
            },
            classifier: TrainConfig::stumps(),
            classifier_grid: SearchGrid {
                learning_rates: vec![0.1, 0.3],
                l2: vec![1.0],
                initial_offsets: vec![0.0],
            }
            .with_offset_sweep(),
            hem: HemConfig::default(),
            ova_head: linear,
            ova_grid: SearchGrid::for_family(LearnerFamily::LinearLogistic),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn schema(&self) -> FeatureSchema {
        FeatureSchema {
            categorical: self.data.categorical_columns(),
            protected: self.protected_feature,
        }
    }

    /// Scenario cost ratios in configuration order.
    pub fn lambdas(&self) -> Vec<f64> {
        self.grid
            .lambda_multipliers
            .iter()
            .map(|m| self.grid.lambda_t * m)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        self.data.validate()?;
        let g = &self.grid;
        if g.alert_fprs.is_empty() || g.alert_fprs.iter().any(|f| !(*f > 0.0 && *f < 1.0)) {
            return bad("alert_fprs must be non-empty and inside (0, 1)".into());
        }
        if !(g.lambda_t > 0.0) || g.lambda_multipliers.is_empty() || g.lambda_multipliers.iter().any(|m| !(*m > 0.0)) {
            return bad("lambda_t and lambda_multipliers must be positive".into());
        }
        if g.n_training_seeds == 0 || g.n_capacity_settings == 0 {
            return bad("need at least one training seed and one capacity setting".into());
        }
        if g.n_training_seeds * g.n_capacity_settings < 2 {
            return bad("confidence intervals need at least two variations".into());
        }
        let fractions = g.data_fractions.iter().chain(&g.ablation_fractions);
        if g.data_fractions.is_empty() || fractions.clone().any(|f| !(*f > 0.0 && *f <= 1.0)) {
            return bad("data fractions must lie in (0, 1]".into());
        }
        if self.team.n_experts == 0 {
            return bad("team needs at least one expert".into());
        }
        if self.protected_feature >= self.data.dim() || self.data.categorical_columns().contains(&self.protected_feature) {
            return bad("protected_feature must be a numeric column".into());
        }
        let s = &self.splits;
        for (name, r) in [
            ("alert_train", s.alert_train),
            ("alert_validation", s.alert_validation),
            ("deferral_train", s.deferral_train),
            ("deferral_validation", s.deferral_validation),
            ("test", s.test),
        ] {
            if r[0] > r[1] || r[1] >= self.data.n_months {
                return bad(format!("split {name} = {r:?} is not a valid month range"));
            }
        }
        for t in [&self.models.alert, &self.models.classifier, &self.models.hem.train, &self.models.ova_head] {
            t.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }
}
