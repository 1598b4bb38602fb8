mod common;

use std::collections::HashMap;
use std::fs;

use revbench::evalrunner::{read_report, run_experiment, write_report, ExperimentConfig, RunOptions};
use revbench::synth::review_corpus;

use common::{config_toml, write_corpus, MOCK};

fn predictors() -> String {
    format!(
        r#"
[[predictors]]
id = "user-mean"
kind = "baseline"
model = "user-mean"

[[predictors]]
id = "mf"
kind = "baseline"
model = "mf"
hyper = {{ dim = 4, lr = 0.01, reg = 0.02, epochs = 5, seed = 3 }}

[[predictors]]
id = "zero-shot"
kind = "llm"
family = "zero-shot"
{MOCK}

[[predictors]]
id = "few-shot"
kind = "llm"
family = "few-shot"
{MOCK}

[[predictors]]
id = "profiled-ratings"
kind = "llm"
family = "profiled"
rating_only = true
{MOCK}
"#
    )
}

const SCENARIOS: &str = r#"
[[scenarios]]
kind = "original"

[[scenarios]]
kind = "no-reviews"

[[scenarios]]
kind = "remove"

[[scenarios]]
kind = "distort"

[[scenarios]]
kind = "sparsity"
ks = [0, 2]

[[scenarios]]
kind = "cold-start"
max_f = 5
"#;

fn load(dir: &std::path::Path, body: &str) -> ExperimentConfig {
    let path = dir.join("cfg.toml");
    fs::write(&path, body).unwrap();
    ExperimentConfig::load(&path).unwrap()
}

#[test]
fn full_grid_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_corpus(dir.path(), "reviews.csv", &review_corpus(600, 60, 40, 9));
    let out = dir.path().join("out");
    let cfg = load(dir.path(), &config_toml(&data, &out, 0, &format!("{}{SCENARIOS}", predictors())));
    let report = run_experiment(&cfg, &RunOptions::default()).unwrap();
    write_report(&report, &out).unwrap();

    // original + no-reviews + 5 remove + 5 distort + 2 sparsity + cold-start
    assert_eq!(report.rows.len(), 15 * 5);
    assert!(report.rows.iter().all(|r| r.status == "ok"), "{:?}", report.rows.iter().find(|r| r.status != "ok"));
    for pred in ["user-mean", "zero-shot"] {
        assert_eq!(report.rows.iter().filter(|r| r.group == "remove" && r.predictor == pred).count(), 5);
    }
    let test_size = report.rows[0].n_eval;
    assert!(report.rows.iter().filter(|r| r.k == 0).all(|r| r.n_eval == test_size));

    let by: HashMap<(&str, &str), &revbench::evalrunner::ReportRow> =
        report.rows.iter().map(|r| ((r.scenario.as_str(), r.predictor.as_str()), r)).collect();
    // echoing the user mean through the prompt path reproduces the baseline
    for s in ["original", "remove@0.5", "kcore@2"] {
        assert_eq!(by[&(s, "zero-shot")].mae.unwrap().to_bits(), by[&(s, "user-mean")].mae.unwrap().to_bits(), "{s}");
    }
    // text-blind predictors do not move across perturbation levels
    for pred in ["user-mean", "mf", "profiled-ratings"] {
        let base = by[&("original", pred)].mae;
        for s in report.rows.iter().filter(|r| r.predictor == pred && (r.group == "remove" || r.group == "distort")) {
            assert_eq!(s.mae, base, "{pred} {}", s.scenario);
        }
    }
    assert!(report.leakage.clean());
    assert!(report.leakage.prompts_scanned > 0);
    assert_eq!(report.cold_start.len(), 6 * 5);

    let (header, rows) = read_report(fs::File::open(out.join("report.csv")).unwrap()).unwrap();
    assert_eq!(rows, report.rows);
    assert!(header.iter().any(|h| h == &format!("config_digest: {}", cfg.digest())));
    for f in ["cold_start.csv", "radar.csv", "timings.csv", "summary.txt", "splits/k0.csv", "splits/k2.csv"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    assert!(out.join("predictions").join("remove_0.25__few-shot.csv").is_file());
}

#[test]
fn identical_runs_give_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_corpus(dir.path(), "reviews.csv", &review_corpus(400, 40, 30, 2));
    let mut bytes = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let cfg = load(dir.path(), &config_toml(&data, &out, 0, &format!("{}{SCENARIOS}", predictors())));
        let report = run_experiment(&cfg, &RunOptions::default()).unwrap();
        write_report(&report, &out).unwrap();
        bytes.push(["report.csv", "cold_start.csv", "radar.csv"].map(|f| fs::read(out.join(f)).unwrap()));
    }
    assert_eq!(bytes[0], bytes[1]);
}

#[test]
fn sequential_and_parallel_agree() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_corpus(dir.path(), "reviews.csv", &review_corpus(300, 30, 20, 4));
    let mut rows = Vec::new();
    for (run, exec) in [("s", revbench::Exec::Sequential), ("p", revbench::Exec::Parallel)] {
        let out = dir.path().join(run);
        let cfg = load(dir.path(), &config_toml(&data, &out, 0, &format!("{}{SCENARIOS}", predictors())));
        rows.push(run_experiment(&cfg, &RunOptions { exec, ..Default::default() }).unwrap().rows);
    }
    assert_eq!(rows[0], rows[1]);
}

#[test]
fn external_predictions_and_failures() {
    let dir = tempfile::tempdir().unwrap();
    let ds = review_corpus(200, 20, 15, 6);
    let data = write_corpus(dir.path(), "reviews.csv", &ds);

    // every interaction predicted as 4
    let mut ext = String::from("review_index,user,item,rating\n");
    for r in ds.reviews() {
        ext.push_str(&format!("{},{},{},4\n", r.review_index, ds.user_name(r.user), ds.item_name(r.item)));
    }
    fs::write(dir.path().join("ext.csv"), &ext).unwrap();
    fs::write(dir.path().join("short.csv"), "review_index,user,item,rating\n").unwrap();

    let tables = r#"
[[predictors]]
id = "ext"
kind = "external"
path = "ext.csv"

[[predictors]]
id = "short"
kind = "external"
path = "short.csv"

[[predictors]]
id = "dead"
kind = "llm"
family = "zero-shot"
backend = { kind = "mock", mock = "fail", retry_count = 1, retry_backoff_ms = [0] }

[[predictors]]
id = "words"
kind = "llm"
family = "zero-shot"
backend = { kind = "mock", mock = "fixed", mock_completion = "no idea" }

[[scenarios]]
kind = "original"
"#;
    let out = dir.path().join("out");
    let cfg = load(dir.path(), &config_toml(&data, &out, 0, tables));
    let report = run_experiment(&cfg, &RunOptions::default()).unwrap();
    let row = |id: &str| report.rows.iter().find(|r| r.predictor == id).unwrap();

    let truth: Vec<f64> = fs::read_to_string(out.join("predictions/original__ext.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(3).unwrap().parse().unwrap())
        .collect();
    let expected = truth.iter().map(|t| (4.0 - t).abs()).sum::<f64>() / truth.len() as f64;
    assert!((row("ext").mae.unwrap() - expected).abs() < 1e-12);
    assert!(row("short").status.starts_with("error:"));
    assert_eq!(row("dead").parse_failure_rate, Some(1.0));
    assert_eq!(row("words").parse_failure_rate, Some(1.0));
    assert_eq!(row("dead").mae, row("words").mae);
}

#[test]
fn prompt_and_profile_export() {
    let dir = tempfile::tempdir().unwrap();
    let ds = review_corpus(300, 25, 20, 8);
    let data = write_corpus(dir.path(), "reviews.csv", &ds);
    let tables = format!(
        r#"
[[predictors]]
id = "rl"
kind = "llm"
family = "profiled"
{MOCK}

[[scenarios]]
kind = "original"
"#
    );
    let out = dir.path().join("out");
    let body = config_toml(&data, &out, 0, &tables).replace("seed = 11", "seed = 11\nexport_prompts = true");
    let cfg = load(dir.path(), &body);
    let report = run_experiment(&cfg, &RunOptions::default()).unwrap();
    assert!(report.leakage.clean());
    assert!(report.leakage.profiles_scanned > 0);

    let text = fs::read_to_string(out.join("prompts/original__rl.ndjson")).unwrap();
    let records = revbench::promptkit::read_prompt_records(text.as_bytes()).unwrap();
    assert_eq!(records.len(), ds.len());
    for fold in ["train", "validation", "test"] {
        assert!(records.iter().any(|r| r.fold.as_deref() == Some(fold)));
    }
    let profiles = fs::read_to_string(out.join("profiles/original__rl.csv")).unwrap();
    assert!(profiles.starts_with("owner_kind,owner_source_id,summary,n_source_reviews,cap_applied\n"));
}
