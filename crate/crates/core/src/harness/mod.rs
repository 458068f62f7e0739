//! End-to-end runs: synthetic data, alert model, expert teams, per-seed
//! expert histories, DeCCaF and OvA training, the capacity variations of
//! every strategy, and report persistence.

pub mod config;
pub mod synthetic;

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use log::info;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use config::{ModelConfig, RunConfig, ScenarioGrid, SplitConfig, OUTPUT_ROOT_ENV};
pub use synthetic::{generate_synthetic, SyntheticData, SyntheticDataSpec};

use crate::alert_model::{filter_alerts, AlertModel};
use crate::assigner::{self, sample_capacities, uniform_capacities};
use crate::baselines::{self, OvaModel};
use crate::data_model::{
    format_f64, weight_for, CapacityMode, CapacitySpec, CostStructure, Dataset, ExpertRecord, Matrix,
};
use crate::error::{ensure_len, Error, Result};
use crate::expert_sim::{self, ExpertView, PreprocessSpec, Team, TeamSpec};
use crate::hem::{build_hem_rows, Hem};
use crate::metrics::{self, EvaluationReport, ModelMetrics, ScenarioKey, VariationResult};
use crate::rng::{self, tags};
use crate::scorer::{self, Scorer, Split};

/// Strategy names used in reports and file names.
pub mod strategy {
    pub const DECCAF: &str = "deccaf";
    pub const OVA: &str = "ova";
    pub const RANDOM: &str = "random";
    pub const ONLY_CLASSIFIER: &str = "oc";
    pub const FULL_REJECTION: &str = "fr";
}

/// Process exit code for an error: 2 config, 3 infeasible capacity,
/// 4 degenerate training data, 1 anything else.
pub fn exit_code(err: &Error) -> i32 {
    match err.root() {
        Error::Config(_) => 2,
        Error::Infeasible(_) | Error::CapacityViolation { .. } => 3,
        Error::Degenerate(_) | Error::SamplingExhausted { .. } => 4,
        _ => 1,
    }
}

/// Output directory: the explicit argument, then the environment variable,
/// then the configured root.
pub fn resolve_output_root(cfg: &RunConfig, explicit: Option<&Path>) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => PathBuf::from(&cfg.output_root),
    }
}

/// File-name stem of a scenario.
pub fn scenario_key(key: &ScenarioKey) -> String {
    format!("a{:.2}_l{:.4}_f{:.2}", key.alert_fpr, key.lambda, key.data_fraction)
}

fn month_range(r: [usize; 2]) -> std::ops::RangeInclusive<usize> {
    r[0]..=r[1]
}

// ---------------------------------------------------------------- alerts

/// Trains the alert scorer once and thresholds it at every configured FPR.
pub fn train_alert_models(cfg: &RunConfig, data: &Dataset) -> Result<Vec<AlertModel>> {
    let train = data.in_batches(month_range(cfg.splits.alert_train));
    let validation = data.in_batches(month_range(cfg.splits.alert_validation));
    let first = AlertModel::train(
        &train,
        &validation,
        cfg.grid.alert_fprs[0],
        &cfg.models.alert,
        &cfg.models.alert_grid,
    )?;
    let mut out = vec![first.clone()];
    for &fpr in &cfg.grid.alert_fprs[1..] {
        out.push(AlertModel::calibrate(first.scorer.clone(), &validation, fpr)?);
    }
    Ok(out)
}

/// Alerts of one split, with the alert-model score `M` and the
/// preprocessed features.
#[derive(Debug, Clone)]
pub struct SplitData {
    pub dataset: Dataset,
    pub view: ExpertView,
}

impl SplitData {
    pub fn new(dataset: Dataset, alert: &AlertModel, preprocess: &PreprocessSpec) -> Result<Self> {
        let scores: Vec<f64> = dataset.iter().map(|i| alert.score(&i.features)).collect();
        let view = ExpertView::new(preprocess.transform(&dataset)?, scores, dataset.labels())?;
        Ok(Self { dataset, view })
    }

    pub fn model_scores(&self) -> &[f64] {
        &self.view.model_scores
    }
}

/// Deferral-stage alerts of one alert-rate scenario.
#[derive(Debug, Clone)]
pub struct AlertSplits {
    pub alert: AlertModel,
    pub preprocess: PreprocessSpec,
    pub train: SplitData,
    pub validation: SplitData,
    pub test: SplitData,
}

pub fn split_alerts(cfg: &RunConfig, alert: &AlertModel, data: &Dataset) -> Result<AlertSplits> {
    let alerts = filter_alerts(alert, data);
    let part = |r: [usize; 2]| alerts.in_batches(month_range(r));
    let (train, validation, test) = (
        part(cfg.splits.deferral_train),
        part(cfg.splits.deferral_validation),
        part(cfg.splits.test),
    );
    for (name, d) in [("deferral train", &train), ("deferral validation", &validation), ("test", &test)] {
        let p = d.prevalence();
        if d.is_empty() || p == 0.0 || p == 1.0 {
            return Err(Error::Degenerate(format!(
                "{name} alerts at FPR {} need both labels ({} rows)",
                alert.target_fpr,
                d.len()
            )));
        }
    }
    let preprocess = PreprocessSpec::fit(&train, &cfg.schema())?;
    Ok(AlertSplits {
        train: SplitData::new(train, alert, &preprocess)?,
        validation: SplitData::new(validation, alert, &preprocess)?,
        test: SplitData::new(test, alert, &preprocess)?,
        alert: alert.clone(),
        preprocess,
    })
}

// ---------------------------------------------------------------- classifier and team

fn cost_weights(dataset: &Dataset, cost: CostStructure) -> Vec<f64> {
    dataset.iter().map(|i| weight_for(i.label, cost)).collect()
}

/// The cost-sensitive classifier `h`, trained on deferral-train alerts and
/// selected on the deferral validation month.
pub fn train_classifier(cfg: &RunConfig, splits: &AlertSplits, lambda: f64) -> Result<Scorer> {
    let cost = CostStructure::new(lambda)?;
    let (tr, va) = (&splits.train.dataset, &splits.validation.dataset);
    let (tx, vx) = (tr.feature_matrix(), va.feature_matrix());
    let (ty, vy) = (tr.labels(), va.labels());
    let (tw, vw) = (cost_weights(tr, cost), cost_weights(va, cost));
    let (h, _) = scorer::select(
        &Split { x: &tx, targets: &ty, weights: &tw },
        &Split { x: &vx, targets: &vy, weights: &vw },
        &cfg.models.classifier,
        &cfg.models.classifier_grid,
    )?;
    Ok(h)
}

/// Expected misclassification cost per instance of a hard classifier.
pub fn classifier_cost(classifier: &Scorer, dataset: &Dataset, lambda: f64) -> Result<f64> {
    let preds = baselines::only_classifier(classifier, dataset);
    Ok(metrics::cost_per_100(&preds, &dataset.labels(), lambda)? / 100.0)
}

/// Team sampling parameters with the run seed mixed in.
pub fn team_spec(cfg: &RunConfig) -> TeamSpec {
    TeamSpec {
        seed: rng::derive_seed(cfg.seed, cfg.team.seed),
        ..cfg.team.clone()
    }
}

/// A team calibrated on the deferral validation month, where the classifier
/// cost is measured as well.
pub fn build_team(cfg: &RunConfig, splits: &AlertSplits, classifier: &Scorer, lambda: f64) -> Result<Team> {
    let h_cost = classifier_cost(classifier, &splits.validation.dataset, lambda)?;
    expert_sim::generate_team(
        &team_spec(cfg),
        &splits.validation.view,
        lambda,
        h_cost,
        cfg.protected_feature,
    )
}

/// Decisions of every expert on every alert of every split.
#[derive(Debug, Clone)]
pub struct DecisionTables {
    pub train: Vec<Vec<bool>>,
    pub validation: Vec<Vec<bool>>,
    pub test: Vec<Vec<bool>>,
}

pub fn sample_tables(cfg: &RunConfig, team: &Team, splits: &AlertSplits) -> DecisionTables {
    let seed = |k: u64| rng::derive_seed(rng::derive_seed(cfg.seed, tags::DECISIONS), k);
    DecisionTables {
        train: expert_sim::sample_team_decisions(team, &splits.train.view, seed(1)),
        validation: expert_sim::sample_team_decisions(team, &splits.validation.view, seed(2)),
        test: expert_sim::sample_team_decisions(team, &splits.test.view, seed(3)),
    }
}

// ---------------------------------------------------------------- histories

/// One decision per alert: alerts are shuffled with `rng`, the first `limit`
/// kept, and experts assigned round-robin so per-expert counts differ by at
/// most one. Taking a prefix of the result keeps that balance.
pub fn sample_history(
    dataset: &Dataset,
    decisions: &[Vec<bool>],
    n_experts: usize,
    limit: usize,
    rng: &mut rng::Rng,
) -> Result<Vec<ExpertRecord>> {
    ensure_len("instances vs decision rows", dataset.len(), decisions.len())?;
    if n_experts == 0 {
        return Err(Error::invalid("history needs at least one expert"));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(rng);
    order.truncate(limit);
    order
        .into_iter()
        .enumerate()
        .map(|(k, pos)| {
            let expert_id = k % n_experts + 1;
            let prediction = *decisions[pos]
                .get(expert_id - 1)
                .ok_or_else(|| Error::invalid(format!("decision row {pos} has no expert {expert_id}")))?;
            Ok(ExpertRecord {
                instance_id: dataset.get(pos).id,
                expert_id,
                prediction,
            })
        })
        .collect()
}

// ---------------------------------------------------------------- assignments

/// Row-exclusivity and capacity checks on every audited assignment.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AssignmentAudit {
    pub assignments_checked: usize,
    pub rows_checked: usize,
    pub violations: usize,
}

impl AssignmentAudit {
    /// Counts one violation per out-of-range decision-maker and per column
    /// whose count breaks its capacity.
    pub fn record(&mut self, assignment: &[usize], capacities: &[i64], mode: CapacityMode) {
        self.assignments_checked += 1;
        self.rows_checked += assignment.len();
        let mut counts = vec![0i64; capacities.len()];
        for &k in assignment {
            match counts.get_mut(k) {
                Some(c) => *c += 1,
                None => self.violations += 1,
            }
        }
        for (&c, &cap) in counts.iter().zip(capacities) {
            let broken = match mode {
                CapacityMode::Equality => c != cap,
                CapacityMode::UpperBound => c > cap,
            };
            self.violations += usize::from(broken);
        }
    }

    pub fn merge(&mut self, other: &AssignmentAudit) {
        self.assignments_checked += other.assignments_checked;
        self.rows_checked += other.rows_checked;
        self.violations += other.violations;
    }
}

/// One row of an assignment file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentRow {
    pub instance_id: u64,
    /// 0 is the classifier, `j` expert `j`.
    pub decision_maker: usize,
    pub prediction: bool,
}

pub fn assignment_rows(dataset: &Dataset, decision_makers: &[usize], predictions: &[bool]) -> Result<Vec<AssignmentRow>> {
    ensure_len("instances vs assignment", dataset.len(), decision_makers.len())?;
    ensure_len("instances vs predictions", dataset.len(), predictions.len())?;
    Ok(dataset
        .iter()
        .zip(decision_makers.iter().zip(predictions))
        .map(|(inst, (&k, &p))| AssignmentRow {
            instance_id: inst.id,
            decision_maker: k,
            prediction: p,
        })
        .collect())
}

pub fn write_assignments<W: Write>(rows: &[AssignmentRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["instance_id", "decision_maker", "prediction"])?;
    for r in rows {
        w.write_record([
            r.instance_id.to_string(),
            r.decision_maker.to_string(),
            u8::from(r.prediction).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_assignments<R: Read>(reader: R) -> Result<Vec<AssignmentRow>> {
    let mut r = csv::Reader::from_reader(reader);
    if r.headers()?.iter().collect::<Vec<_>>() != ["instance_id", "decision_maker", "prediction"] {
        return Err(Error::invalid("assignment header must be instance_id,decision_maker,prediction"));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let field = |k: usize| -> Result<u64> {
            rec[k]
                .trim()
                .parse()
                .map_err(|_| Error::invalid(format!("bad assignment field `{}`", &rec[k])))
        };
        let prediction = match field(2)? {
            0 => false,
            1 => true,
            v => return Err(Error::invalid(format!("prediction {v} is not 0/1"))),
        };
        out.push(AssignmentRow {
            instance_id: field(0)?,
            decision_maker: field(1)? as usize,
            prediction,
        });
    }
    Ok(out)
}

/// Writes a full decision table: `instance_id,expert_01,...,expert_J`.
pub fn write_decision_table<W: Write>(dataset: &Dataset, decisions: &[Vec<bool>], writer: W) -> Result<()> {
    ensure_len("instances vs decision rows", dataset.len(), decisions.len())?;
    let j = decisions.first().map_or(0, Vec::len);
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["instance_id".to_string()];
    header.extend((1..=j).map(|e| format!("expert_{e:02}")));
    w.write_record(&header)?;
    for (inst, row) in dataset.iter().zip(decisions) {
        let mut rec = vec![inst.id.to_string()];
        rec.extend(row.iter().map(|&d| u8::from(d).to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a decision table keyed by instance id.
pub fn read_decision_table<R: Read>(reader: R) -> Result<BTreeMap<u64, Vec<bool>>> {
    let mut r = csv::Reader::from_reader(reader);
    let header = r.headers()?.clone();
    if header.get(0) != Some("instance_id") {
        return Err(Error::invalid("decision table must start with instance_id"));
    }
    let mut out = BTreeMap::new();
    for rec in r.records() {
        let rec = rec?;
        let bad = |s: &str| Error::invalid(format!("bad decision table field `{s}`"));
        let id: u64 = rec[0].trim().parse().map_err(|_| bad(&rec[0]))?;
        let row = (1..rec.len())
            .map(|k| match rec[k].trim() {
                "0" => Ok(false),
                "1" => Ok(true),
                s => Err(bad(s)),
            })
            .collect::<Result<Vec<_>>>()?;
        out.insert(id, row);
    }
    Ok(out)
}

/// Capacity vector of setting `c`: uniform for `c = 0`, sampled otherwise.
pub fn capacity_setting(cfg: &RunConfig, n: usize, n_dm: usize, c: usize) -> Vec<i64> {
    if c == 0 {
        uniform_capacities(n, n_dm)
    } else {
        sample_capacities(n, n_dm, &mut rng::stream(rng::derive_seed(cfg.seed, tags::CAPACITY), c as u64))
    }
}

// ---------------------------------------------------------------- scenarios

/// Per-seed models trained on one history.
#[derive(Debug, Clone)]
pub struct TrainedDeferral {
    pub hem: Hem,
    pub ova: OvaModel,
    pub records: usize,
}

pub fn train_deferral(
    cfg: &RunConfig,
    splits: &AlertSplits,
    classifier: &Scorer,
    train_records: &[ExpertRecord],
    validation_records: &[ExpertRecord],
    lambda: f64,
) -> Result<TrainedDeferral> {
    let cost = CostStructure::new(lambda)?;
    let j = cfg.team.n_experts;
    let tr = build_hem_rows(&splits.train.dataset, train_records, splits.train.model_scores(), cost)?;
    let va = build_hem_rows(
        &splits.validation.dataset,
        validation_records,
        splits.validation.model_scores(),
        cost,
    )?;
    let (hem, _) = Hem::train(&tr, &va, splits.preprocess.clone(), j, &cfg.models.hem).map_err(|e| e.at_stage("hem"))?;
    let ova = OvaModel::train(
        classifier.clone(),
        &tr,
        &va,
        splits.preprocess.clone(),
        j,
        &cfg.models.ova_head,
        &cfg.models.ova_grid,
    )
    .map_err(|e| e.at_stage("ova"))?;
    Ok(TrainedDeferral {
        hem,
        ova,
        records: train_records.len(),
    })
}

/// Everything a scenario writes besides its report.
#[derive(Debug, Clone, Default)]
pub struct ScenarioArtifacts {
    /// `(strategy, seed index, capacity index)` to rows.
    pub assignments: BTreeMap<(String, usize, usize), Vec<AssignmentRow>>,
    pub audit: AssignmentAudit,
}

/// Weighted ECE / AUC of a correctness estimate against realised correctness.
fn correctness_metrics(est: &Matrix, col: usize, decisions: &[Vec<bool>], labels: &[bool], weights: &[f64]) -> Result<ModelMetrics> {
    let p: Vec<f64> = (0..est.rows()).map(|i| est.get(i, col)).collect();
    let ok: Vec<bool> = decisions.iter().zip(labels).map(|(d, &y)| d[col - 1] == y).collect();
    Ok(ModelMetrics {
        ece: metrics::weighted_ece(&p, &ok, weights, metrics::DEFAULT_BINS)?,
        roc_auc: metrics::weighted_auc(&p, &ok, weights)?,
    })
}

fn average_metrics(per_seed: &[BTreeMap<String, ModelMetrics>]) -> BTreeMap<String, ModelMetrics> {
    let mut out = BTreeMap::new();
    let n = per_seed.len() as f64;
    for name in per_seed[0].keys() {
        let (e, a) = per_seed
            .iter()
            .map(|m| &m[name])
            .fold((0.0, 0.0), |(e, a), m| (e + m.ece, a + m.roc_auc));
        out.insert(name.clone(), ModelMetrics { ece: e / n, roc_auc: a / n });
    }
    out
}

/// Shared state of one (alert rate, λ) pair; data fractions reuse it.
pub struct LambdaStage<'a> {
    pub cfg: &'a RunConfig,
    pub splits: &'a AlertSplits,
    pub lambda: f64,
    pub classifier: Scorer,
    pub team: Team,
    pub tables: DecisionTables,
    /// Cap on history size shared by every alert-rate scenario.
    pub history_limit: usize,
}

impl<'a> LambdaStage<'a> {
    pub fn new(cfg: &'a RunConfig, splits: &'a AlertSplits, lambda: f64, history_limit: usize) -> Result<Self> {
        let classifier = train_classifier(cfg, splits, lambda).map_err(|e| e.at_stage("classifier"))?;
        let team = build_team(cfg, splits, &classifier, lambda).map_err(|e| e.at_stage("experts"))?;
        let tables = sample_tables(cfg, &team, splits);
        Ok(Self {
            cfg,
            splits,
            lambda,
            classifier,
            team,
            tables,
            history_limit,
        })
    }

    /// Expert histories of training seed `s` (train and validation months).
    pub fn histories(&self, s: usize, fraction: f64) -> Result<(Vec<ExpertRecord>, Vec<ExpertRecord>)> {
        let j = self.cfg.team.n_experts;
        let hist_seed = rng::derive_seed(self.cfg.seed, tags::HISTORY);
        let limit = self.history_limit.min(self.splits.train.dataset.len());
        let mut train = sample_history(
            &self.splits.train.dataset,
            &self.tables.train,
            j,
            limit,
            &mut rng::stream(hist_seed, s as u64),
        )?;
        train.truncate(((fraction * limit as f64).floor() as usize).max(j));
        let validation = sample_history(
            &self.splits.validation.dataset,
            &self.tables.validation,
            j,
            self.splits.validation.dataset.len(),
            &mut rng::stream(hist_seed, 1_000 + s as u64),
        )?;
        Ok((train, validation))
    }

    /// All variations of one data fraction.
    pub fn run_fraction(&self, fraction: f64) -> Result<(EvaluationReport, ScenarioArtifacts)> {
        let cfg = self.cfg;
        let test = &self.splits.test;
        let labels = test.dataset.labels();
        let n = test.dataset.len();
        let j = cfg.team.n_experts;
        let lambda = self.lambda;
        let cost = CostStructure::new(lambda)?;
        let weights = cost_weights(&test.dataset, cost);
        let h_preds = baselines::only_classifier(&self.classifier, &test.dataset);
        let oc_cost = metrics::cost_per_100(&h_preds, &labels, lambda)?;
        let fr_cost = metrics::cost_per_100(&baselines::full_rejection(n), &labels, lambda)?;

        let h_probs: Vec<f64> = test.dataset.iter().map(|i| self.classifier.probability(&i.features)).collect();
        let classifier_metrics = ModelMetrics {
            ece: metrics::weighted_ece(&h_probs, &labels, &weights, metrics::DEFAULT_BINS)?,
            roc_auc: metrics::weighted_auc(&h_probs, &labels, &weights)?,
        };

        let mut artifacts = ScenarioArtifacts::default();
        let mut variations = Vec::new();
        let mut per_seed_metrics = Vec::new();
        for s in 0..cfg.grid.n_training_seeds {
            let (train_hist, val_hist) = self.histories(s, fraction)?;
            let trained = train_deferral(cfg, self.splits, &self.classifier, &train_hist, &val_hist, lambda)
                .map_err(|e| e.at_stage("deferral training"))?;
            let deccaf_prob = assigner::correctness_matrix(&self.classifier, &trained.hem, &test.dataset, test.model_scores())?;
            let ova_prob = trained.ova.head_matrix(&test.dataset, test.model_scores())?;

            let mut m = BTreeMap::new();
            m.insert("classifier".to_string(), classifier_metrics.clone());
            for e in 1..=j {
                m.insert(format!("hem/expert_{e:02}"), correctness_metrics(&deccaf_prob, e, &self.tables.test, &labels, &weights)?);
                m.insert(format!("ova/expert_{e:02}"), correctness_metrics(&ova_prob, e, &self.tables.test, &labels, &weights)?);
            }
            per_seed_metrics.push(m);

            for c in 0..cfg.grid.n_capacity_settings {
                let caps = capacity_setting(cfg, n, j + 1, c);
                let spec = CapacitySpec::single_batch(caps.clone(), cfg.grid.capacity_mode);
                let (_, deccaf) = assigner::assign_batches(&deccaf_prob, &test.dataset, &spec).map_err(|e| e.at_stage("assignment"))?;
                let ova = baselines::ova_assign_batches(&ova_prob, &test.dataset, &spec, cfg.grid.greedy_order)
                    .map_err(|e| e.at_stage("assignment"))?;
                let mut rrng = rng::stream(
                    rng::derive_seed(cfg.seed, tags::RANDOM_ASSIGN),
                    (s * cfg.grid.n_capacity_settings + c) as u64,
                );
                let random = baselines::random_assign_batches(&test.dataset, &spec, &mut rrng).map_err(|e| e.at_stage("assignment"))?;

                let mut costs = BTreeMap::new();
                for (name, dms) in [(strategy::DECCAF, deccaf), (strategy::OVA, ova), (strategy::RANDOM, random)] {
                    artifacts.audit.record(&dms, &caps, cfg.grid.capacity_mode);
                    let preds = assigner::final_predictions(&dms, &h_preds, &self.tables.test)?;
                    costs.insert(name.to_string(), metrics::cost_per_100(&preds, &labels, lambda)?);
                    artifacts
                        .assignments
                        .insert((name.to_string(), s, c), assignment_rows(&test.dataset, &dms, &preds)?);
                }
                costs.insert(strategy::ONLY_CLASSIFIER.to_string(), oc_cost);
                costs.insert(strategy::FULL_REJECTION.to_string(), fr_cost);
                variations.push(VariationResult {
                    seed_index: s,
                    capacity_index: c,
                    costs,
                });
            }
        }
        let key = ScenarioKey {
            alert_fpr: self.splits.alert.target_fpr,
            lambda,
            data_fraction: fraction,
        };
        info!("scenario {} done", scenario_key(&key));
        let report = metrics::summarize(key, variations, average_metrics(&per_seed_metrics), strategy::DECCAF)?;
        Ok((report, artifacts))
    }
}

/// Shared upstream state of a run: the data, the alert models and the
/// history cap equalising record counts across alert rates.
pub struct RunContext {
    pub cfg: RunConfig,
    pub data: SyntheticData,
    pub alert_models: Vec<AlertModel>,
    pub splits: Vec<AlertSplits>,
    pub history_limit: usize,
}

impl RunContext {
    pub fn prepare(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let data = generate_synthetic(&cfg.data, cfg.seed).map_err(|e| e.at_stage("data"))?;
        let alert_models = train_alert_models(cfg, &data.dataset).map_err(|e| e.at_stage("alert model"))?;
        let splits = alert_models
            .iter()
            .map(|m| split_alerts(cfg, m, &data.dataset))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| e.at_stage("alerts"))?;
        let history_limit = splits.iter().map(|s| s.train.dataset.len()).min().unwrap_or(0);
        Ok(Self {
            cfg: cfg.clone(),
            data,
            alert_models,
            splits,
            history_limit,
        })
    }

    fn fpr_index(&self, alert_fpr: f64) -> Result<usize> {
        self.cfg
            .grid
            .alert_fprs
            .iter()
            .position(|&f| f == alert_fpr)
            .ok_or_else(|| Error::Config(format!("alert FPR {alert_fpr} is not in the grid")))
    }

    pub fn lambda_stage(&self, alert_fpr: f64, lambda: f64) -> Result<LambdaStage<'_>> {
        let k = self.fpr_index(alert_fpr)?;
        LambdaStage::new(&self.cfg, &self.splits[k], lambda, self.history_limit)
    }
}

/// One report of the grid, by alert FPR, λ and data fraction.
pub fn run_scenario(cfg: &RunConfig, alert_fpr: f64, lambda: f64, fraction: f64) -> Result<EvaluationReport> {
    let ctx = RunContext::prepare(cfg)?;
    let stage = ctx.lambda_stage(alert_fpr, lambda)?;
    Ok(stage.run_fraction(fraction)?.0)
}

/// Results of a full grid run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub reports: Vec<EvaluationReport>,
    pub teams: Vec<(f64, Team)>,
    pub audit: AssignmentAudit,
}

fn is_lambda_t(cfg: &RunConfig, lambda: f64) -> bool {
    (lambda - cfg.grid.lambda_t).abs() <= 1e-12 * cfg.grid.lambda_t
}

/// Runs every (alert rate, λ, fraction) scenario; writes reports,
/// assignments, teams and the audit under `out_dir` when given.
pub fn run_all(cfg: &RunConfig, out_dir: Option<&Path>) -> Result<RunOutput> {
    let ctx = RunContext::prepare(cfg)?;
    if let Some(dir) = out_dir {
        for sub in ["reports", "assignments", "teams"] {
            std::fs::create_dir_all(dir.join(sub))?;
        }
        std::fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
    }
    let mut reports = Vec::new();
    let mut teams = Vec::new();
    let mut audit = AssignmentAudit::default();
    for (k, &fpr) in cfg.grid.alert_fprs.iter().enumerate() {
        for lambda in cfg.lambdas() {
            let stage = LambdaStage::new(cfg, &ctx.splits[k], lambda, ctx.history_limit)?;
            if let Some(dir) = out_dir {
                let name = format!("a{fpr:.2}_l{lambda:.4}.json");
                std::fs::write(dir.join("teams").join(name), serde_json::to_string_pretty(&stage.team)?)?;
            }
            let mut fractions = cfg.grid.data_fractions.clone();
            if is_lambda_t(cfg, lambda) {
                fractions.extend(cfg.grid.ablation_fractions.iter().filter(|f| !fractions.contains(f)).collect::<Vec<_>>());
            }
            for fraction in fractions {
                let (report, artifacts) = stage.run_fraction(fraction)?;
                audit.merge(&artifacts.audit);
                if let Some(dir) = out_dir {
                    write_scenario(dir, &report, &artifacts)?;
                }
                reports.push(report);
            }
            teams.push((fpr, stage.team));
        }
    }
    if let Some(dir) = out_dir {
        std::fs::write(dir.join("reports.json"), serde_json::to_string_pretty(&reports)?)?;
        std::fs::write(dir.join("audit.json"), serde_json::to_string_pretty(&audit)?)?;
    }
    Ok(RunOutput { reports, teams, audit })
}

fn write_scenario(dir: &Path, report: &EvaluationReport, artifacts: &ScenarioArtifacts) -> Result<()> {
    let key = scenario_key(&report.scenario);
    std::fs::write(
        dir.join("reports").join(format!("{key}.json")),
        serde_json::to_string_pretty(report)?,
    )?;
    let adir = dir.join("assignments").join(&key);
    std::fs::create_dir_all(&adir)?;
    for ((name, s, c), rows) in &artifacts.assignments {
        let file = std::fs::File::create(adir.join(format!("{name}_s{s}_c{c}.csv")))?;
        write_assignments(rows, std::io::BufWriter::new(file))?;
    }
    Ok(())
}

/// Flat CSV of a set of reports, one row per (scenario, strategy).
pub fn reports_csv<W: Write>(reports: &[EvaluationReport], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["alert_fpr", "lambda", "data_fraction", "strategy", "mean", "ci_half_width", "n", "deccaf_win_rate"])?;
    for r in reports {
        for (name, s) in &r.strategies {
            let win = r.win_rates.get(name).map(|v| format_f64(*v)).unwrap_or_default();
            w.write_record([
                format_f64(r.scenario.alert_fpr),
                format_f64(r.scenario.lambda),
                format_f64(r.scenario.data_fraction),
                name.clone(),
                format_f64(s.mean),
                format_f64(s.ci_half_width),
                s.n.to_string(),
                win,
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
