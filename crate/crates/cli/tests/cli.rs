use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use revbench::evalrunner::ExperimentConfig;
use revbench::synth::review_corpus;

fn revbench(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_revbench")).args(args).env("RUST_LOG", "warn").output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn amazon_dump(path: &Path) {
    let ds = review_corpus(400, 40, 25, 12);
    let mut text = String::new();
    for r in ds.reviews() {
        text.push_str(&format!(
            "{{\"reviewerID\": \"{}\", \"asin\": \"{}\", \"overall\": {}, \"reviewText\": \"{}\", \"unixReviewTime\": {}}}\n",
            ds.user_name(r.user),
            ds.item_name(r.item),
            r.rating,
            r.text,
            r.timestamp.unwrap()
        ));
    }
    // one empty review and one broken line
    text.push_str("{\"reviewerID\": \"U0\", \"asin\": \"I0\", \"overall\": 3.0, \"reviewText\": \"  \"}\n{not json\n");
    fs::write(path, text).unwrap();
}

#[test]
fn stage_by_stage() {
    let dir = tempfile::tempdir().unwrap();
    let d = |name: &str| dir.path().join(name).to_str().unwrap().to_owned();
    amazon_dump(&dir.path().join("dump.json"));

    let o = revbench(&["ingest", "-i", &d("dump.json"), "--format", "amazon-2014-jsonlines", "-o", &d("reviews.csv")]);
    assert!(stdout(&o).starts_with("400 reviews"), "{}", stdout(&o));
    assert!(stdout(&o).contains("dropped 1 empty") && stdout(&o).contains("1 malformed"));

    let o = revbench(&["kcore", "-i", &d("reviews.csv"), "--ks", "0,2", "--filter", "2", "-o", &d("core2.csv")]);
    let table = stdout(&o);
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "k,users,items,reviews");
    assert!(lines[1].starts_with("0,") && lines[1].ends_with(",400"));
    let core_rows = fs::read_to_string(d("core2.csv")).unwrap().lines().count() - 1;
    assert!(lines[2].ends_with(&format!(",{core_rows}")));

    let o = revbench(&["split", "-i", &d("reviews.csv"), "--seed", "3", "-o", &d("split.csv")]);
    assert_eq!(stdout(&o).trim(), "train 320, validation 40, test 40");

    let o = revbench(&[
        "perturb", "-i", &d("reviews.csv"), "--split", &d("split.csv"), "--kind", "remove", "--fraction", "0.5", "--seed", "1",
        "-o", &d("removed.csv"), "--manifest", &d("removed_manifest.csv"),
    ]);
    assert_eq!(stdout(&o).trim(), "remove: 160 of 320 training reviews changed");
    assert_eq!(fs::read_to_string(d("removed_manifest.csv")).unwrap().lines().count(), 161);
}

fn write_config(dir: &Path, data: &str) -> String {
    let cfg = format!(
        r#"version = 1
seed = 4
output_dir = "out"

[dataset]
path = "{data}"
format = "generic-csv"

[[predictors]]
id = "user-mean"
kind = "baseline"
model = "user-mean"

[[predictors]]
id = "echo"
kind = "llm"
family = "profiled"
backend = {{ kind = "mock", mock = "user-mean" }}

[[scenarios]]
kind = "original"

[[scenarios]]
kind = "remove"
fractions = [0.0, 1.0]
"#
    );
    let path = dir.join("cfg.toml");
    fs::write(&path, cfg).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn run_report_and_profile() {
    let dir = tempfile::tempdir().unwrap();
    let ds = review_corpus(300, 30, 20, 5);
    ds.write_csv(fs::File::create(dir.path().join("reviews.csv")).unwrap()).unwrap();
    let cfg = write_config(dir.path(), "reviews.csv");

    let o = revbench(&["run", "-c", &cfg]);
    assert!(stdout(&o).contains("remove@1"));
    let out = dir.path().join("out");
    let report = fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(report.starts_with("# code_version: "));
    assert_eq!(report.lines().filter(|l| !l.starts_with('#')).count(), 1 + 3 * 2);

    let o = revbench(&["report", out.to_str().unwrap()]);
    let text = stdout(&o);
    assert!(text.contains("# config_digest: "));
    assert!(text.lines().any(|l| l.starts_with("original") && l.contains("user-mean")));

    let again = dir.path().join("again");
    revbench(&["--sequential", "run", "-c", &cfg, "--output-dir", again.to_str().unwrap()]);
    assert_eq!(fs::read(again.join("report.csv")).unwrap(), report.as_bytes());

    let profiles = dir.path().join("profiles.csv");
    let o = revbench(&["profile", "-c", &cfg, "--predictor", "echo", "-o", profiles.to_str().unwrap()]);
    assert!(stdout(&o).contains("profiles"));
    assert!(fs::read_to_string(&profiles).unwrap().starts_with("owner_kind,owner_source_id,summary"));
}

#[test]
fn bad_inputs_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "missing.csv");
    let o = Command::new(env!("CARGO_BIN_EXE_revbench")).args(["run", "-c", &cfg]).output().unwrap();
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("does not exist"));

    let o = Command::new(env!("CARGO_BIN_EXE_revbench")).args(["profile", "-c", &cfg, "--predictor", "user-mean", "-o", "x"]).output().unwrap();
    assert!(!o.status.success());
}

#[test]
fn shipped_config_parses() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/example.toml");
    let cfg = ExperimentConfig::from_toml(&fs::read_to_string(path).unwrap()).unwrap();
    assert_eq!(cfg.core.k, 5);
    assert_eq!(cfg.scenarios.len(), 6);
}
