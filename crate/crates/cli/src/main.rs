use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use defer_core::alert_model::AlertModel;
use defer_core::assigner;
use defer_core::baselines::{self, OvaModel};
use defer_core::data_model::{read_expert_records, write_expert_records, CapacitySpec, CostStructure, Dataset, ExpertRecord};
use defer_core::expert_sim::complementarity_counts;
use defer_core::harness::{self, AlertSplits, AssignmentAudit, RunConfig};
use defer_core::hem::{build_hem_rows, Hem};
use defer_core::metrics::{self, ScenarioKey, VariationResult};
use defer_core::rng::{self, tags};
use defer_core::scorer::Scorer;

#[derive(Parser)]
#[command(name = "defer", about = "Cost-sensitive learning to defer with capacity-constrained experts")]
struct Cli {
    /// Run configuration (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset.
    GenData {
        #[arg(long)]
        out: PathBuf,
        /// Also write `id,true_prob` for every instance.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Train the alert model and threshold it at a validation FPR.
    TrainAlert {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        target_fpr: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic expert team and its decisions on the alerts.
    GenExperts {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        lambda: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the classifier and the human expertise model.
    TrainDeccaf {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        experts: PathBuf,
        #[arg(long)]
        alert_model: PathBuf,
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the one-vs-all baseline.
    TrainOva {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        experts: PathBuf,
        #[arg(long)]
        alert_model: PathBuf,
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Assign the test-month alerts to decision-makers.
    Assign {
        /// Directory holding classifier_h.model and hem.model / ova.model.
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        alert_model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Expert decision table on the test alerts (test_decisions.csv).
        #[arg(long)]
        decisions: PathBuf,
        /// Capacity specification (JSON); one uniform batch when omitted.
        #[arg(long)]
        capacities: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Strategy::Deccaf)]
        strategy: Strategy,
        /// Seed of the random strategy.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cost per 100 instances of assignment files.
    Evaluate {
        #[arg(long, num_args = 1.., required = true)]
        assignments: Vec<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        out: PathBuf,
        /// Flat CSV of the strategy summaries.
        #[arg(long)]
        emit_csv: Option<PathBuf>,
        /// Alert FPR recorded in the scenario key.
        #[arg(long, default_value_t = 0.0)]
        alert_fpr: f64,
        /// Data fraction recorded in the scenario key.
        #[arg(long, default_value_t = 1.0)]
        data_fraction: f64,
    },
    /// Run the full scenario grid.
    RunAll {
        /// Output directory; falls back to DEFERRAL_OUTPUT_ROOT, then the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write reports.csv.
        #[arg(long)]
        emit_csv: bool,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Strategy {
    Deccaf,
    Ova,
    Random,
    Fr,
    Oc,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = err
                .chain()
                .find_map(|e| e.downcast_ref::<defer_core::Error>())
                .map_or(1, harness::exit_code);
            ExitCode::from(code as u8)
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    Ok(match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    })
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::GenData { out, truth } => gen_data(&cfg, &out, truth.as_deref()),
        Command::TrainAlert { data, target_fpr, out } => train_alert(&cfg, &data, target_fpr, &out),
        Command::GenExperts { data, model, lambda, seed, out } => gen_experts(&cfg, &data, &model, lambda, seed, &out),
        Command::TrainDeccaf { data, experts, alert_model, lambda, out } => {
            train_models(&cfg, &data, &experts, &alert_model, lambda, &out, false)
        }
        Command::TrainOva { data, experts, alert_model, lambda, out } => {
            train_models(&cfg, &data, &experts, &alert_model, lambda, &out, true)
        }
        Command::Assign { models, alert_model, data, decisions, capacities, strategy, seed, out } => assign(
            &cfg,
            &models,
            &alert_model,
            &data,
            &decisions,
            capacities.as_deref(),
            strategy,
            seed,
            &out,
        ),
        Command::Evaluate { assignments, data, lambda, out, emit_csv, alert_fpr, data_fraction } => {
            let key = ScenarioKey { alert_fpr, lambda, data_fraction };
            evaluate(&assignments, &data, key, &out, emit_csv.as_deref())
        }
        Command::RunAll { out, emit_csv } => {
            let dir = harness::resolve_output_root(&cfg, out.as_deref());
            let output = harness::run_all(&cfg, Some(&dir))?;
            if emit_csv {
                harness::reports_csv(&output.reports, BufWriter::new(File::create(dir.join("reports.csv"))?))?;
            }
            println!("{}", json!({ "reports": output.reports.len(), "out": dir, "audit": output.audit }));
            Ok(())
        }
    }
}

fn gen_data(cfg: &RunConfig, out: &Path, truth: Option<&Path>) -> Result<()> {
    let data = harness::generate_synthetic(&cfg.data, cfg.seed)?;
    data.dataset.save(out)?;
    if let Some(path) = truth {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["id", "true_prob"])?;
        for (inst, p) in data.dataset.iter().zip(&data.true_prob) {
            w.write_record([inst.id.to_string(), defer_core::data_model::format_f64(*p)])?;
        }
        w.flush()?;
    }
    println!(
        "{}",
        json!({ "instances": data.dataset.len(), "prevalence": data.dataset.prevalence(), "intercept": data.intercept })
    );
    Ok(())
}

fn train_alert(cfg: &RunConfig, data: &Path, target_fpr: f64, out: &Path) -> Result<()> {
    let data = Dataset::load(data)?;
    let cfg = RunConfig {
        grid: harness::ScenarioGrid { alert_fprs: vec![target_fpr], ..cfg.grid.clone() },
        ..cfg.clone()
    };
    let model = harness::train_alert_models(&cfg, &data)?.remove(0);
    model.save(out)?;
    println!(
        "{}",
        json!({
            "threshold": model.threshold,
            "lambda_t": model.lambda_t(),
            "alert_rate": model.alert_rate,
            "validation_recall": model.validation_recall,
        })
    );
    Ok(())
}

fn load_splits(cfg: &RunConfig, data: &Path, alert_model: &Path) -> Result<AlertSplits> {
    let data = Dataset::load(data)?;
    let alert = AlertModel::load(alert_model)?;
    Ok(harness::split_alerts(cfg, &alert, &data)?)
}

fn gen_experts(cfg: &RunConfig, data: &Path, model: &Path, lambda: f64, seed: u64, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let mut cfg = cfg.clone();
    cfg.team.seed = seed;
    let splits = load_splits(&cfg, data, model)?;
    let classifier = harness::train_classifier(&cfg, &splits, lambda)?;
    let team = harness::build_team(&cfg, &splits, &classifier, lambda)?;
    let tables = harness::sample_tables(&cfg, &team, &splits);
    let j = team.len();

    // one decision per deferral-train and validation alert
    let hist = rng::derive_seed(seed, tags::HISTORY);
    let mut records = harness::sample_history(
        &splits.train.dataset,
        &tables.train,
        j,
        splits.train.dataset.len(),
        &mut rng::stream(hist, 0),
    )?;
    records.extend(harness::sample_history(
        &splits.validation.dataset,
        &tables.validation,
        j,
        splits.validation.dataset.len(),
        &mut rng::stream(hist, 1),
    )?);
    write_expert_records(&records, BufWriter::new(File::create(out.join("expert_predictions.csv"))?))?;
    harness::write_decision_table(
        &splits.test.dataset,
        &tables.test,
        BufWriter::new(File::create(out.join("test_decisions.csv"))?),
    )?;
    write_json(&out.join("team.json"), &team)?;
    classifier.save(&out.join("classifier_h.model"))?;

    let test = &splits.test;
    let labels = &test.view.labels;
    let column = |e: usize| -> Vec<bool> { tables.test.iter().map(|r| r[e]).collect() };
    let mut experts = Vec::new();
    for (e, params) in team.experts.iter().enumerate() {
        let d = column(e);
        let (mut fp, mut neg, mut fnc, mut pos) = (0usize, 0usize, 0usize, 0usize);
        for (&p, &y) in d.iter().zip(labels) {
            if y {
                pos += 1;
                fnc += usize::from(!p);
            } else {
                neg += 1;
                fp += usize::from(p);
            }
        }
        experts.push(json!({
            "expert_id": e + 1,
            "fpr": fp as f64 / neg.max(1) as f64,
            "fnr": fnc as f64 / pos.max(1) as f64,
            "expected_cost": test.view.expected_cost(params, lambda),
            "target_cost": team.targets[e].cost,
        }));
    }
    let mut complementarity = vec![vec![0.0; j]; j];
    for (a, row) in complementarity.iter_mut().enumerate() {
        for (b, v) in row.iter_mut().enumerate() {
            *v = complementarity_counts(&column(a), &column(b), labels)?;
        }
    }
    write_json(
        &out.join("team_report.json"),
        &json!({
            "lambda": lambda,
            "test_alerts": test.dataset.len(),
            "reject_all_cost": team.reject_all_cost,
            "classifier_cost": team.classifier_cost,
            "experts": experts,
            "complementarity": complementarity,
        }),
    )?;
    println!("{}", json!({ "experts": j, "records": records.len(), "test_alerts": test.dataset.len() }));
    Ok(())
}

fn partition_records(splits: &AlertSplits, records: Vec<ExpertRecord>) -> (Vec<ExpertRecord>, Vec<ExpertRecord>) {
    let train_ids: HashSet<u64> = splits.train.dataset.ids().into_iter().collect();
    let val_ids: HashSet<u64> = splits.validation.dataset.ids().into_iter().collect();
    let (train, rest): (Vec<_>, Vec<_>) = records.into_iter().partition(|r| train_ids.contains(&r.instance_id));
    let validation = rest.into_iter().filter(|r| val_ids.contains(&r.instance_id)).collect();
    (train, validation)
}

fn train_models(
    cfg: &RunConfig,
    data: &Path,
    experts: &Path,
    alert_model: &Path,
    lambda: f64,
    out: &Path,
    ova: bool,
) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let splits = load_splits(cfg, data, alert_model)?;
    let records = read_expert_records(BufReader::new(File::open(experts)?))?;
    let (train, validation) = partition_records(&splits, records);
    let classifier = harness::train_classifier(cfg, &splits, lambda)?;
    classifier.save(&out.join("classifier_h.model"))?;
    let cost = CostStructure::new(lambda)?;
    let tr = build_hem_rows(&splits.train.dataset, &train, splits.train.model_scores(), cost)?;
    let va = build_hem_rows(&splits.validation.dataset, &validation, splits.validation.model_scores(), cost)?;
    let j = cfg.team.n_experts;
    if ova {
        let model = OvaModel::train(
            classifier,
            &tr,
            &va,
            splits.preprocess.clone(),
            j,
            &cfg.models.ova_head,
            &cfg.models.ova_grid,
        )?;
        model.save(&out.join("ova.model"))?;
    } else {
        let (hem, outcome) = Hem::train(&tr, &va, splits.preprocess.clone(), j, &cfg.models.hem)?;
        hem.save(&out.join("hem.model"))?;
        log::info!("HEM validation loss {:.6}", outcome.validation_loss);
    }
    println!("{}", json!({ "train_records": tr.len(), "validation_records": va.len(), "out": out }));
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn assign(
    cfg: &RunConfig,
    models: &Path,
    alert_model: &Path,
    data: &Path,
    decisions: &Path,
    capacities: Option<&Path>,
    strategy: Strategy,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let splits = load_splits(cfg, data, alert_model)?;
    let test = &splits.test;
    let n = test.dataset.len();
    let table = harness::read_decision_table(BufReader::new(File::open(decisions)?))?;
    let expert_decisions = test
        .dataset
        .iter()
        .map(|i| table.get(&i.id).cloned().ok_or_else(|| anyhow!("no expert decisions for instance {}", i.id)))
        .collect::<Result<Vec<_>>>()?;
    let j = expert_decisions.first().map_or(0, Vec::len);
    let spec: CapacitySpec = match capacities {
        Some(p) => serde_json::from_reader(BufReader::new(File::open(p)?))?,
        None => CapacitySpec::single_batch(assigner::uniform_capacities(n, j + 1), cfg.grid.capacity_mode),
    };
    defer_core::data_model::validate_capacity(&spec, &test.dataset)?;
    if spec.n_decision_makers() != j + 1 {
        bail!("capacities list {} decision-makers, decisions {} experts", spec.n_decision_makers(), j);
    }
    let classifier = || Scorer::load(&models.join("classifier_h.model"));
    let (dms, preds) = match strategy {
        Strategy::Fr => (vec![0; n], baselines::full_rejection(n)),
        Strategy::Oc => (vec![0; n], baselines::only_classifier(&classifier()?, &test.dataset)),
        _ => {
            let h = classifier()?;
            let dms = match strategy {
                Strategy::Deccaf => {
                    let hem = Hem::load(&models.join("hem.model"))?;
                    let prob = assigner::correctness_matrix(&h, &hem, &test.dataset, test.model_scores())?;
                    assigner::assign_batches(&prob, &test.dataset, &spec)?.1
                }
                Strategy::Ova => {
                    let ova = OvaModel::load(&models.join("ova.model"))?;
                    let prob = ova.head_matrix(&test.dataset, test.model_scores())?;
                    baselines::ova_assign_batches(&prob, &test.dataset, &spec, cfg.grid.greedy_order)?
                }
                _ => baselines::random_assign_batches(&test.dataset, &spec, &mut rng::stream(seed, tags::RANDOM_ASSIGN))?,
            };
            let h_preds = baselines::only_classifier(&h, &test.dataset);
            let preds = assigner::final_predictions(&dms, &h_preds, &expert_decisions)?;
            (dms, preds)
        }
    };
    if matches!(strategy, Strategy::Deccaf | Strategy::Ova | Strategy::Random) {
        let mut audit = AssignmentAudit::default();
        for (b, members) in spec.batches(&test.dataset)?.iter().enumerate() {
            let a: Vec<usize> = members.iter().map(|&p| dms[p]).collect();
            audit.record(&a, &spec.capacities[b], spec.mode);
        }
        if audit.violations > 0 {
            bail!("assignment audit found {} violations", audit.violations);
        }
    }
    let rows = harness::assignment_rows(&test.dataset, &dms, &preds)?;
    harness::write_assignments(&rows, BufWriter::new(File::create(out)?))?;
    println!("{}", json!({ "assigned": n, "out": out }));
    Ok(())
}

/// `<strategy>_s<seed>_c<capacity>` file stems, as written by `run-all`.
fn parse_stem(path: &Path) -> (String, Option<(usize, usize)>) {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("assignments").to_string();
    let parts: Vec<&str> = stem.rsplitn(3, '_').collect();
    if let [c, s, name] = parts[..] {
        if let (Some(Ok(c)), Some(Ok(s))) = (c.strip_prefix('c').map(str::parse), s.strip_prefix('s').map(str::parse)) {
            return (name.to_string(), Some((s, c)));
        }
    }
    (stem, None)
}

fn evaluate(files: &[PathBuf], data: &Path, key: ScenarioKey, out: &Path, emit_csv: Option<&Path>) -> Result<()> {
    let lambda = key.lambda;
    let data = Dataset::load(data)?;
    let labels: BTreeMap<u64, bool> = data.iter().map(|i| (i.id, i.label)).collect();
    let mut per_file = Vec::new();
    let mut variations: BTreeMap<(usize, usize), BTreeMap<String, f64>> = BTreeMap::new();
    let mut by_strategy: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (k, path) in files.iter().enumerate() {
        let rows = harness::read_assignments(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))?;
        let (preds, ys): (Vec<bool>, Vec<bool>) = rows
            .iter()
            .map(|r| {
                labels
                    .get(&r.instance_id)
                    .map(|&y| (r.prediction, y))
                    .ok_or_else(|| anyhow!("instance {} not in the dataset", r.instance_id))
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip();
        let cost = metrics::cost_per_100(&preds, &ys, lambda)?;
        let (name, sc) = parse_stem(path);
        let (s, c) = sc.unwrap_or((k, 0));
        variations.entry((s, c)).or_default().insert(name.clone(), cost);
        by_strategy.entry(name.clone()).or_default().push(cost);
        per_file.push(json!({ "path": path, "strategy": name, "seed_index": s, "capacity_index": c, "rows": rows.len(), "cost_per_100": cost }));
    }
    let aligned = variations.len() >= 2 && variations.values().all(|v| v.keys().eq(by_strategy.keys()));
    let report = if aligned {
        let vars = variations
            .into_iter()
            .map(|((s, c), costs)| VariationResult { seed_index: s, capacity_index: c, costs })
            .collect();
        let report = metrics::summarize(key, vars, BTreeMap::new(), harness::strategy::DECCAF)?;
        if let Some(csv_path) = emit_csv {
            harness::reports_csv(std::slice::from_ref(&report), BufWriter::new(File::create(csv_path)?))?;
        }
        serde_json::to_value(&report)?
    } else {
        if emit_csv.is_some() {
            bail!("--emit-csv needs at least two aligned variations per strategy");
        }
        let strategies: BTreeMap<String, serde_json::Value> = by_strategy
            .iter()
            .map(|(k, v)| (k.clone(), json!({ "mean": v.iter().sum::<f64>() / v.len() as f64, "n": v.len() })))
            .collect();
        json!({ "lambda": lambda, "strategies": strategies })
    };
    write_json(out, &json!({ "files": per_file, "report": report }))?;
    Ok(())
}
