//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::distr::weighted::WeightedIndex;
use rand::{Rng as _, SeedableRng};
use rand_distr::{Distribution, StandardNormal};

use defer_core::alert_model::lambda_from_threshold;
use defer_core::assigner::{self, AssignmentProblem, COST_SCALE};
use defer_core::baselines::{self, GreedyOrder};
use defer_core::data_model::{weight_for, CapacityMode, CostStructure, Dataset, Instance, Matrix};
use defer_core::expert_sim::{error_rate, solve_beta, ErrorKind};
use defer_core::harness::{self, RunConfig, RunContext, RunOutput, SplitData};
use defer_core::metrics;
use defer_core::rng::Rng;
use defer_core::scorer::{self, linear_loss_and_gradient, TrainConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

fn int_objective(p: &AssignmentProblem, assignment: &[usize]) -> i64 {
    assignment
        .iter()
        .enumerate()
        .map(|(i, &k)| (p.prob.get(i, k) * COST_SCALE).round() as i64)
        .sum()
}

/// Random composition of `n` into `m` non-negative parts.
fn random_composition(n: usize, m: usize, r: &mut Rng) -> Vec<i64> {
    let mut caps = vec![0i64; m];
    for _ in 0..n {
        caps[r.random_range(0..m)] += 1;
    }
    caps
}

// ---------------------------------------------------------------- 1

fn solver_optimality() -> Outcome {
    let mut r = rng(1);
    let start = Instant::now();
    let mut mismatches = 0;
    let mut solved = 0;
    for t in 0..1000 {
        let n = r.random_range(1..=8);
        let m = r.random_range(1..=4);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..m).map(|_| r.random::<f64>()).collect()).collect();
        let (caps, mode) = if t % 2 == 0 {
            (random_composition(n, m, &mut r), CapacityMode::Equality)
        } else {
            let mut caps: Vec<i64> = (0..m).map(|_| r.random_range(0..=n as i64)).collect();
            let short = n as i64 - caps.iter().sum::<i64>();
            if short > 0 {
                caps[0] += short;
            }
            (caps, CapacityMode::UpperBound)
        };
        let p = AssignmentProblem::new(Matrix::from_rows(&rows), caps, mode).unwrap();
        let flow = assigner::solve(&p).unwrap();
        let exact = assigner::solve_exhaustive(&p).unwrap();
        solved += 1;
        if int_objective(&p, &flow.assignment) != int_objective(&p, &exact.assignment) || p.check(&flow.assignment).is_err() {
            mismatches += 1;
        }
    }
    let elapsed = start.elapsed();
    outcome(
        mismatches == 0 && elapsed < Duration::from_secs(10),
        format!("{solved} problems, {mismatches} objective mismatches, {:.2}s", elapsed.as_secs_f64()),
    )
}

// ---------------------------------------------------------------- 3

fn bisection_calibration() -> Outcome {
    let mut r = rng(3);
    let mut worst = 0.0f64;
    for t in 0..100 {
        let dim = r.random_range(2..=8);
        let w: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut r)).collect();
        let w_m: f64 = StandardNormal.sample(&mut r);
        let norm = (w.iter().map(|v| v * v).sum::<f64>() + w_m * w_m).sqrt();
        let alpha = r.random_range(0.0..8.0);
        let target = r.random_range(0.01..0.99);
        let u: Vec<f64> = (0..2_000)
            .map(|_| {
                let dot: f64 = w.iter().map(|wk| wk * r.random_range(-0.5..0.5)).sum();
                (dot + w_m * r.random::<f64>()) / norm
            })
            .collect();
        let kind = if t % 2 == 0 { ErrorKind::FalsePositive } else { ErrorKind::FalseNegative };
        let beta = solve_beta(target, alpha, &u, kind).unwrap();
        worst = worst.max((error_rate(beta, alpha, &u, kind) - target).abs());
    }
    outcome(worst <= 1e-6, format!("100 draws, max |rate - target| = {worst:.2e}"))
}

// ---------------------------------------------------------------- 4

fn expert_cost_targeting(ctx: &RunContext) -> Outcome {
    let cfg = &ctx.cfg;
    let (mut n, mut worst_rel, mut cap_breaks) = (0, 0.0f64, 0);
    for &fpr in &cfg.grid.alert_fprs {
        for lambda in cfg.lambdas() {
            let stage = ctx.lambda_stage(fpr, lambda).unwrap();
            let view = &stage.splits.validation.view;
            let cap = cfg.team.cost_cap_ratio * stage.team.reject_all_cost;
            for (params, target) in stage.team.experts.iter().zip(&stage.team.targets) {
                let realised = view.expected_cost(params, lambda);
                worst_rel = worst_rel.max((realised - target.cost).abs() / target.cost);
                cap_breaks += usize::from(realised > cap + 1e-9 || target.cost > cap + 1e-9);
                n += 1;
            }
        }
    }
    outcome(
        worst_rel <= 0.05 && cap_breaks == 0,
        format!("{n} experts, max relative cost error {worst_rel:.2e}, {cap_breaks} above cap"),
    )
}

// ---------------------------------------------------------------- 5

fn linear_rows(n: usize, theta: &[f64], bias: f64, r: &mut Rng) -> (Matrix, Vec<bool>) {
    let d = theta.len();
    let mut x = Matrix::zeros(n, d);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let row = x.row_mut(i);
        for v in row.iter_mut() {
            *v = StandardNormal.sample(r);
        }
        let g = bias + row.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>();
        y.push(r.random::<f64>() < scorer::inverse_link(g));
    }
    (x, y)
}

fn scorer_calibration() -> Outcome {
    let mut r = rng(5);
    let theta = [1.2, -0.8, 0.5, 0.0, 2.0];
    let (x, y) = linear_rows(50_000, &theta, -1.0, &mut r);
    let w = vec![1.0; y.len()];
    let model = scorer::fit(&x, &y, &w, &TrainConfig::linear()).unwrap();
    let (hx, hy) = linear_rows(50_000, &theta, -1.0, &mut r);
    let ece = metrics::weighted_ece(&model.probabilities(&hx).unwrap(), &hy, &w, 10).unwrap();

    let (sx, sy) = linear_rows(400, &theta, -1.0, &mut r);
    let sw: Vec<f64> = (0..400).map(|_| r.random_range(0.1..2.0)).collect();
    let mut worst = 0.0f64;
    let h = 1e-5;
    for _ in 0..100 {
        let params: Vec<f64> = (0..=theta.len()).map(|_| r.random_range(-2.0..2.0)).collect();
        let (_, grad) = linear_loss_and_gradient(&params, &sx, &sy, &sw, 0.01);
        let fd: Vec<f64> = (0..params.len())
            .map(|k| {
                let mut up = params.clone();
                let mut dn = params.clone();
                up[k] += h;
                dn[k] -= h;
                let lu = linear_loss_and_gradient(&up, &sx, &sy, &sw, 0.01).0;
                let ld = linear_loss_and_gradient(&dn, &sx, &sy, &sw, 0.01).0;
                (lu - ld) / (2.0 * h)
            })
            .collect();
        let diff = grad.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm = grad.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-8);
        worst = worst.max(diff / norm);
    }
    outcome(
        ece <= 0.05 && worst <= 1e-5,
        format!("held-out ECE {ece:.4}, max gradient relative error {worst:.2e}"),
    )
}

// ---------------------------------------------------------------- 6

fn decision_cost(pred: bool, y: bool, lambda: f64) -> f64 {
    match (y, pred) {
        (false, true) => lambda,
        (true, false) => 1.0,
        _ => 0.0,
    }
}

/// Cost-weighted correctness mass per decision-maker from the generator's
/// true `P(y = 1 | x)` and error probabilities.
fn oracle_matrix(split: &SplitData, true_prob: &[f64], team: &defer_core::expert_sim::Team, h_pred: &[bool], lambda: f64) -> Matrix {
    let errs: Vec<(Vec<f64>, Vec<f64>)> = team.experts.iter().map(|e| split.view.error_probabilities(e)).collect();
    let mut m = Matrix::zeros(split.dataset.len(), team.len() + 1);
    for (i, inst) in split.dataset.iter().enumerate() {
        let p1 = true_prob[inst.id as usize];
        let p0 = 1.0 - p1;
        m.set(i, 0, if h_pred[i] { p1 } else { lambda * p0 });
        for (j, (fp, fnr)) in errs.iter().enumerate() {
            m.set(i, j + 1, p1 * (1.0 - fnr[i]) + lambda * p0 * (1.0 - fp[i]));
        }
    }
    m
}

fn oracle_deferral(ctx: &RunContext) -> Outcome {
    let cfg = &ctx.cfg;
    let lambda = cfg.grid.lambda_t;
    let fpr = *cfg.grid.alert_fprs.last().unwrap();
    let stage = ctx.lambda_stage(fpr, lambda).unwrap();
    let (train_hist, val_hist) = stage.histories(0, 1.0).unwrap();
    let trained = harness::train_deferral(cfg, stage.splits, &stage.classifier, &train_hist, &val_hist, lambda).unwrap();
    let j = stage.team.len();
    let names = ["ova", "random", "oc", "fr"];
    let mut diffs: BTreeMap<&str, Vec<f64>> = names.iter().map(|n| (*n, Vec::new())).collect();
    let mut r = rng(6);
    let mut small_mismatch = 0;
    let mut small_checked = 0;
    let batch = 100;
    let rounds = 5;
    let splits = [
        (&stage.splits.train, &stage.tables.train),
        (&stage.splits.validation, &stage.tables.validation),
        (&stage.splits.test, &stage.tables.test),
    ];
    for (split, table) in splits {
        let ds = &split.dataset;
        let labels = ds.labels();
        let h_pred = baselines::only_classifier(&stage.classifier, ds);
        let oracle = oracle_matrix(split, &ctx.data.true_prob, &stage.team, &h_pred, lambda);
        let ova = trained.ova.head_matrix(ds, split.model_scores()).unwrap();
        let cost_of = |i: usize, k: usize| {
            let pred = if k == 0 { h_pred[i] } else { table[i][k - 1] };
            decision_cost(pred, labels[i], lambda)
        };
        for _ in 0..rounds {
            for start in (0..ds.len()).step_by(batch) {
                let rows: Vec<usize> = (start..(start + batch).min(ds.len())).collect();
                let caps = assigner::sample_capacities(rows.len(), j + 1, &mut r);
                let p = AssignmentProblem::new(oracle.select_rows(&rows), caps.clone(), CapacityMode::Equality).unwrap();
                let best = assigner::solve(&p).unwrap().assignment;
                let ova_a = baselines::ova_assign(&ova.select_rows(&rows), &caps, CapacityMode::Equality, GreedyOrder::AscendingId).unwrap();
                let rand_a = baselines::random_assign(rows.len(), &caps, CapacityMode::Equality, &mut r).unwrap();
                for (t, &i) in rows.iter().enumerate() {
                    let base = cost_of(i, best[t]);
                    diffs.get_mut("ova").unwrap().push(cost_of(i, ova_a[t]) - base);
                    diffs.get_mut("random").unwrap().push(cost_of(i, rand_a[t]) - base);
                    diffs.get_mut("oc").unwrap().push(decision_cost(h_pred[i], labels[i], lambda) - base);
                    diffs.get_mut("fr").unwrap().push(decision_cost(true, labels[i], lambda) - base);
                }
            }
        }
        // small batches against enumeration
        for start in (0..ds.len().saturating_sub(8)).step_by(97).take(100) {
            let rows: Vec<usize> = (start..start + 8).collect();
            let m = r.random_range(2..=(j + 1).min(4));
            let cols: Vec<usize> = std::iter::once(0).chain((1..=j).take(m - 1)).collect();
            let sub: Vec<Vec<f64>> = rows.iter().map(|&i| cols.iter().map(|&c| oracle.get(i, c)).collect()).collect();
            let caps = random_composition(8, m, &mut r);
            let p = AssignmentProblem::new(Matrix::from_rows(&sub), caps, CapacityMode::Equality).unwrap();
            let a = assigner::solve(&p).unwrap().assignment;
            let b = assigner::solve_exhaustive(&p).unwrap().assignment;
            small_checked += 1;
            small_mismatch += usize::from(int_objective(&p, &a) != int_objective(&p, &b));
        }
    }
    let mut pass = small_mismatch == 0;
    let mut parts = vec![format!("{small_checked} small batches, {small_mismatch} mismatches")];
    let n = diffs["ova"].len();
    pass &= n >= 20_000;
    for name in names {
        let d = &diffs[name];
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let sd = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (d.len() - 1) as f64).sqrt();
        let se = sd / (d.len() as f64).sqrt();
        pass &= mean >= 2.0 * se;
        parts.push(format!("{name} +{:.4}/decision ({:.1} SE)", mean, mean / se));
    }
    outcome(pass, format!("N = {n} decisions; {}", parts.join(", ")))
}

// ---------------------------------------------------------------- 2, 7, 8, 10

fn constraint_audit(cfg: &RunConfig, out: &RunOutput, dir: &Path) -> Outcome {
    let j = cfg.team.n_experts;
    let (mut files, mut violations) = (0usize, out.audit.violations);
    for scenario in std::fs::read_dir(dir.join("assignments")).unwrap() {
        let scenario = scenario.unwrap().path();
        for file in std::fs::read_dir(&scenario).unwrap() {
            let path = file.unwrap().path();
            let rows = harness::read_assignments(std::fs::File::open(&path).unwrap()).unwrap();
            let stem = path.file_stem().unwrap().to_str().unwrap().to_string();
            let c: usize = stem.rsplit('_').next().unwrap()[1..].parse().unwrap();
            let caps = harness::capacity_setting(cfg, rows.len(), j + 1, c);
            let ids: HashSet<u64> = rows.iter().map(|r| r.instance_id).collect();
            violations += rows.len() - ids.len();
            let dms: Vec<usize> = rows.iter().map(|r| r.decision_maker).collect();
            let mut audit = harness::AssignmentAudit::default();
            audit.record(&dms, &caps, cfg.grid.capacity_mode);
            violations += audit.violations;
            files += 1;
        }
    }
    outcome(
        violations == 0 && files > 0 && out.audit.assignments_checked == files,
        format!(
            "{} in-run assignments ({} rows), {files} files re-audited, {violations} violations",
            out.audit.assignments_checked, out.audit.rows_checked
        ),
    )
}

fn end_to_end_ordering(cfg: &RunConfig, out: &RunOutput, runtime: Duration) -> Outcome {
    let full: Vec<_> = out.reports.iter().filter(|r| r.scenario.data_fraction == 1.0).collect();
    let cheaper = full
        .iter()
        .filter(|r| r.strategies["deccaf"].mean <= r.strategies["random"].mean)
        .count();
    let significant = full
        .iter()
        .filter(|r| r.win_rates["random"] >= metrics::SIGNIFICANT_WIN_RATE)
        .count();
    let expected = cfg.grid.alert_fprs.len() * cfg.lambdas().len();
    outcome(
        full.len() == expected && cheaper >= 5 && significant >= 4 && runtime <= Duration::from_secs(900),
        format!(
            "{} scenarios, DeCCaF <= Random in {cheaper}, win rate >= 0.68 in {significant}, grid runtime {:.1}s",
            full.len(),
            runtime.as_secs_f64()
        ),
    )
}

fn data_ablation(cfg: &RunConfig, out: &RunOutput) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    let at = |fpr: f64, frac: f64| {
        out.reports
            .iter()
            .find(|r| r.scenario.alert_fpr == fpr && r.scenario.lambda == cfg.grid.lambda_t && r.scenario.data_fraction == frac)
    };
    for &fpr in &cfg.grid.alert_fprs {
        let (Some(full), Some(quarter)) = (at(fpr, 1.0), at(fpr, 0.25)) else {
            return outcome(false, format!("missing ablation reports for FPR {fpr}"));
        };
        for name in ["deccaf", "ova"] {
            let (a, b) = (&full.strategies[name], &quarter.strategies[name]);
            let ok = a.mean <= b.mean + a.ci_half_width.max(b.ci_half_width);
            pass &= ok;
            parts.push(format!("{name}@{fpr}: {:.3} vs {:.3}", a.mean, b.mean));
        }
    }
    outcome(pass, format!("100% vs 25% data: {}", parts.join(", ")))
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn determinism(a: &Path, b: &Path) -> Outcome {
    let (fa, fb) = (files_under(a), files_under(b));
    let differing = fa
        .iter()
        .filter(|f| std::fs::read(a.join(f)).ok() != std::fs::read(b.join(f)).ok())
        .count();
    outcome(
        fa == fb && differing == 0 && !fa.is_empty(),
        format!("{} files compared, {differing} differ", fa.len()),
    )
}

// ---------------------------------------------------------------- 9

fn reweighting_identity() -> Outcome {
    let mut r = rng(9);
    let lambda = 0.057;
    let cost = CostStructure::new(lambda).unwrap();
    let n = 20_000;
    let data: Vec<Instance> = (0..n)
        .map(|i| {
            let x: Vec<f64> = (0..3).map(|_| StandardNormal.sample(&mut r)).collect();
            let p = scorer::inverse_link(-1.5 + x[0] - 0.5 * x[1]);
            Instance { id: i as u64, label: r.random::<f64>() < p, features: x, weight: 1.0, batch: 0 }
        })
        .collect();
    let ds = Dataset::new(data).unwrap();
    let c: Vec<f64> = ds.iter().map(|i| weight_for(i.label, cost)).collect();
    let mean_c = c.iter().sum::<f64>() / n as f64;
    let sampler = WeightedIndex::new(&c).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let w: Vec<f64> = (0..4).map(|_| StandardNormal.sample(&mut r)).collect();
        let preds: Vec<bool> = ds
            .iter()
            .map(|i| w[3] + i.features.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() > 0.0)
            .collect();
        let err: Vec<bool> = ds.iter().zip(&preds).map(|(i, &p)| p != i.label).collect();
        let weighted = err.iter().zip(&c).map(|(&e, &ci)| if e { ci } else { 0.0 }).sum::<f64>() / n as f64;
        let draws = 10_000;
        let hits = (0..draws).filter(|_| err[sampler.sample(&mut r)]).count();
        let rate = hits as f64 / draws as f64;
        let se = (rate * (1.0 - rate) / draws as f64).sqrt().max(1.0 / draws as f64) * mean_c;
        worst = worst.max((weighted - mean_c * rate).abs() / se);
    }
    let exact = lambda_from_threshold(0.5).unwrap() == 1.0;
    outcome(
        worst <= 3.0 && exact,
        format!("20 predictors, max deviation {worst:.2} SE; lambda_t(0.5) = {}", lambda_from_threshold(0.5).unwrap()),
    )
}

fn main() {
    // `cargo test` passes harness flags such as `--list`; only run for a real invocation
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let cfg = RunConfig::default();
    let mut results: Vec<(u32, &str, Outcome)> = vec![
        (1, "solver optimality", solver_optimality()),
        (3, "bisection calibration", bisection_calibration()),
        (5, "scorer calibration", scorer_calibration()),
        (9, "reweighting identity", reweighting_identity()),
    ];

    let ctx = RunContext::prepare(&cfg).expect("pipeline preparation");
    results.push((4, "expert cost targeting", expert_cost_targeting(&ctx)));
    results.push((6, "oracle deferral", oracle_deferral(&ctx)));

    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let out = harness::run_all(&cfg, Some(dir_a.path())).expect("full grid run");
    let runtime = start.elapsed();
    harness::run_all(&cfg, Some(dir_b.path())).expect("second grid run");
    results.push((2, "constraint satisfaction", constraint_audit(&cfg, &out, dir_a.path())));
    results.push((7, "end-to-end ordering", end_to_end_ordering(&cfg, &out, runtime)));
    results.push((8, "data ablation", data_ablation(&cfg, &out)));
    results.push((10, "determinism", determinism(dir_a.path(), dir_b.path())));

    results.sort_by_key(|r| r.0);
    let mut failed = 0;
    for (k, name, o) in &results {
        println!("{} criterion {k:>2} ({name}): {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
