use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
seed = 5

[data]
n_instances = 20000
prevalence = 0.05

[grid]
alert_fprs = [0.15]
lambda_multipliers = [1.0]
n_training_seeds = 2
n_capacity_settings = 2
ablation_fractions = []

[team]
n_experts = 3

[models.alert]
family = "boosted-stumps"
max_iterations = 40
learning_rate = 0.1
l2 = 1.0
seed = 0
initial_score_offset = 0.0
"#;

fn defer(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_defer"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .env_remove("DEFERRAL_OUTPUT_ROOT")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> serde_json::Value {
    let out = defer(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    serde_json::from_str(stdout.lines().last().unwrap_or("null")).unwrap_or(serde_json::Value::Null)
}

#[test]
fn staged_verbs_produce_consistent_files() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("small.toml"), SMALL).unwrap();
    let c = ["--config", "small.toml"];
    let with = |rest: &[&'static str]| -> Vec<&str> { c.iter().copied().chain(rest.iter().copied()).collect() };

    ok(d, &with(&["gen-data", "--out", "data.csv"]));
    let alert = ok(d, &with(&["train-alert", "--data", "data.csv", "--target-fpr", "0.15", "--out", "alert.model"]));
    for key in ["threshold", "lambda_t", "alert_rate", "validation_recall"] {
        assert!(alert[key].is_number(), "{key}");
    }
    ok(d, &with(&["gen-experts", "--data", "data.csv", "--model", "alert.model", "--lambda", "0.057", "--seed", "2", "--out", "team"]));
    for f in ["team.json", "expert_predictions.csv", "team_report.json", "test_decisions.csv"] {
        assert!(d.join("team").join(f).exists(), "{f}");
    }
    let common = ["--data", "data.csv", "--experts", "team/expert_predictions.csv", "--alert-model", "alert.model", "--lambda", "0.057", "--out", "models"];
    ok(d, &with(&[&["train-deccaf"][..], &common[..]].concat()));
    ok(d, &with(&[&["train-ova"][..], &common[..]].concat()));
    assert!(d.join("models/hem.model").exists() && d.join("models/ova.model").exists());

    let mut files = Vec::new();
    for s in ["deccaf", "ova", "random", "oc", "fr"] {
        for k in 0..2 {
            let file = format!("{s}_s{k}_c0.csv");
            let seed = k.to_string();
            let args: Vec<&str> = with(&["assign", "--models", "models", "--alert-model", "alert.model", "--data", "data.csv", "--decisions", "team/test_decisions.csv", "--strategy"])
                .into_iter()
                .chain([s, "--seed", &seed, "--out", &file])
                .collect();
            ok(d, &args);
            files.push(file);
        }
    }
    let text = std::fs::read_to_string(d.join("deccaf_s0_c0.csv")).unwrap();
    assert!(text.starts_with("instance_id,decision_maker,prediction\n"));

    let mut args = vec!["evaluate", "--data", "data.csv", "--lambda", "0.057", "--out", "report.json", "--emit-csv", "report.csv", "--assignments"];
    args.extend(files.iter().map(String::as_str));
    ok(d, &args);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["report"]["strategies"]["deccaf"]["n"], 2);
    assert_eq!(std::fs::read_to_string(d.join("report.csv")).unwrap().lines().count(), 6);
}

#[test]
fn run_all_honours_output_root_and_is_repeatable() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("small.toml"), SMALL).unwrap();
    ok(d, &["--config", "small.toml", "run-all", "--out", "a", "--emit-csv"]);
    let out = Command::new(env!("CARGO_BIN_EXE_defer"))
        .current_dir(d)
        .env("RUST_LOG", "warn")
        .env("DEFERRAL_OUTPUT_ROOT", d.join("b"))
        .args(["--config", "small.toml", "run-all"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let read = |root: &str| std::fs::read(d.join(root).join("reports.json")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert!(d.join("a/reports.csv").exists());
    assert!(d.join("a/assignments/a0.15_l0.0570_f1.00/deccaf_s1_c1.csv").exists());
}

#[test]
fn exit_codes_follow_error_kind() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("bad.toml"), "[grid]\nalert_fprs = [2.0]\n").unwrap();
    assert_eq!(defer(d, &["--config", "bad.toml", "run-all"]).status.code(), Some(2));

    std::fs::write(d.join("small.toml"), SMALL).unwrap();
    let c = ["--config", "small.toml"];
    ok(d, &[&c[..], &["gen-data", "--out", "data.csv"]].concat());
    ok(d, &[&c[..], &["train-alert", "--data", "data.csv", "--target-fpr", "0.15", "--out", "alert.model"]].concat());
    ok(d, &[&c[..], &["gen-experts", "--data", "data.csv", "--model", "alert.model", "--lambda", "0.057", "--out", "team"]].concat());
    std::fs::write(d.join("caps.json"), r#"{"capacities": [[1, 1, 1, 1]], "mode": "equality"}"#).unwrap();
    let out = defer(
        d,
        &[&c[..], &["assign", "--models", "team", "--alert-model", "alert.model", "--data", "data.csv", "--decisions", "team/test_decisions.csv", "--capacities", "caps.json", "--strategy", "oc", "--out", "x.csv"]].concat(),
    );
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
