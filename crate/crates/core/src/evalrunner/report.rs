//! Report files written after a run:
//!
//! * `report.csv`: one row per (scenario, predictor), preceded by `#`
//!   provenance lines (code version, prompt template version, config
//!   digest, seeds). A function of config, seeds and cache contents only.
//! * `cold_start.csv`: MAE per training-count bucket `f`.
//! * `radar.csv`: tidy `(metric, axis, predictor, value)` rows for plotting.
//! * `timings.csv`: wall time and backend call counts. Not reproducible.
//! * `summary.txt`: aligned text table plus leakage audit counts.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::runner::{ReportRow, RunError, RunReport};
use crate::promptkit::TEMPLATE_VERSION;

pub const REPORT_COLUMNS: [&str; 12] = [
    "scenario",
    "group",
    "level",
    "k",
    "predictor",
    "status",
    "n_eval",
    "mae",
    "mse",
    "parse_failure_rate",
    "n_failed",
    "demo_shortfall",
];

fn num(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out)
}

fn provenance(report: &RunReport) -> String {
    format!(
        "# code_version: {}\n# template_version: {TEMPLATE_VERSION}\n# config_digest: {}\n# seed: {}\n# split_seed: {}\n",
        report.code_version, report.config_digest, report.seed, report.split_seed
    )
}

fn report_csv(report: &RunReport) -> Result<Vec<u8>, csv::Error> {
    let mut buf = provenance(report).into_bytes();
    let mut w = writer(&mut buf);
    w.write_record(REPORT_COLUMNS)?;
    for r in &report.rows {
        w.write_record([
            r.scenario.clone(),
            r.group.clone(),
            r.level.clone(),
            r.k.to_string(),
            r.predictor.clone(),
            r.status.clone(),
            r.n_eval.to_string(),
            num(r.mae),
            num(r.mse),
            num(r.parse_failure_rate),
            r.n_failed.to_string(),
            r.demo_shortfall.to_string(),
        ])?;
    }
    drop(w);
    Ok(buf)
}

fn cold_start_csv(report: &RunReport) -> Result<Vec<u8>, csv::Error> {
    let mut buf = provenance(report).into_bytes();
    let mut w = writer(&mut buf);
    w.write_record(["scenario", "predictor", "f", "n_users", "n_interactions", "mae"])?;
    for r in &report.cold_start {
        w.write_record([
            r.scenario.clone(),
            r.predictor.clone(),
            r.f.to_string(),
            r.n_users.to_string(),
            r.n_interactions.to_string(),
            num(r.mae),
        ])?;
    }
    drop(w);
    Ok(buf)
}

fn radar_csv(report: &RunReport) -> Result<Vec<u8>, csv::Error> {
    let mut buf = Vec::new();
    let mut w = writer(&mut buf);
    w.write_record(["metric", "axis", "predictor", "value"])?;
    for metric in ["mae", "mse"] {
        for r in report.rows.iter().filter(|r| r.status == "ok") {
            let v = if metric == "mae" { r.mae } else { r.mse };
            w.write_record([metric, &r.scenario, &r.predictor, &num(v)])?;
        }
    }
    drop(w);
    Ok(buf)
}

fn timings_csv(report: &RunReport) -> Result<Vec<u8>, csv::Error> {
    let mut buf = Vec::new();
    let mut w = writer(&mut buf);
    w.write_record(["scenario", "predictor", "wall_ms", "backend_calls", "cache_hits"])?;
    for t in &report.timings {
        w.write_record([
            t.scenario.clone(),
            t.predictor.clone(),
            t.wall_ms.to_string(),
            t.backend_calls.to_string(),
            t.cache_hits.to_string(),
        ])?;
    }
    drop(w);
    Ok(buf)
}

/// Fixed-width text table of the report rows.
pub fn format_summary(rows: &[ReportRow]) -> String {
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
    let table: Vec<[String; 6]> = rows
        .iter()
        .map(|r| {
            [
                r.scenario.clone(),
                r.predictor.clone(),
                r.n_eval.to_string(),
                fmt(r.mae),
                fmt(r.mse),
                if r.status == "ok" { fmt(r.parse_failure_rate) } else { r.status.clone() },
            ]
        })
        .collect();
    let head = ["scenario", "predictor", "n_eval", "MAE", "MSE", "fail_rate/status"];
    let mut width = head.map(str::len);
    for row in &table {
        for (w, cell) in width.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: [&str; 6]| {
        let parts: Vec<String> = cells.iter().zip(width).map(|(c, w)| format!("{c:<w$}")).collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&mut out, head);
    for row in &table {
        line(&mut out, [&row[0], &row[1], &row[2], &row[3], &row[4], &row[5]]);
    }
    out
}

fn put(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), RunError> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|source| RunError::Io { path, source })
}

fn csv_err(dir: &Path) -> impl Fn(csv::Error) -> RunError + '_ {
    move |e| RunError::Io { path: dir.to_owned(), source: std::io::Error::other(e.to_string()) }
}

pub fn write_report(report: &RunReport, dir: &Path) -> Result<(), RunError> {
    fs::create_dir_all(dir).map_err(|source| RunError::Io { path: dir.to_owned(), source })?;
    put(dir, "report.csv", &report_csv(report).map_err(csv_err(dir))?)?;
    put(dir, "cold_start.csv", &cold_start_csv(report).map_err(csv_err(dir))?)?;
    put(dir, "radar.csv", &radar_csv(report).map_err(csv_err(dir))?)?;
    put(dir, "timings.csv", &timings_csv(report).map_err(csv_err(dir))?)?;

    let a = report.leakage;
    let mut summary = provenance(report);
    summary.push('\n');
    summary.push_str(&format_summary(&report.rows));
    let _ = write!(
        summary,
        "\nleakage audit: {} prompts and {} profiles scanned; {} prompts showed their target review, \
         {} prompt entries and {} profile sources were outside the training fold\n",
        a.prompts_scanned, a.profiles_scanned, a.target_review_shown, a.outside_train, a.profile_sources_outside
    );
    put(dir, "summary.txt", summary.as_bytes())
}

/// Reads a `report.csv`, returning its provenance lines (without `# `) and
/// rows.
pub fn read_report<R: Read>(input: R) -> Result<(Vec<String>, Vec<ReportRow>), csv::Error> {
    let mut header = Vec::new();
    let mut body = String::new();
    for line in BufReader::new(input).lines() {
        let line = line?;
        match line.strip_prefix('#') {
            Some(rest) if body.is_empty() => header.push(rest.trim().to_owned()),
            _ => {
                body.push_str(&line);
                body.push('\n');
            }
        }
    }
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let bad = |m: String| csv::Error::from(std::io::Error::new(std::io::ErrorKind::InvalidData, m));
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let get = |i: usize| rec.get(i).unwrap_or("").to_owned();
        let int = |i: usize| get(i).parse::<usize>().map_err(|_| bad(format!("column {} is not an integer", REPORT_COLUMNS[i])));
        let opt = |i: usize| -> Result<Option<f64>, csv::Error> {
            match get(i).as_str() {
                "" => Ok(None),
                s => s.parse().map(Some).map_err(|_| bad(format!("column {} is not a number", REPORT_COLUMNS[i]))),
            }
        };
        rows.push(ReportRow {
            scenario: get(0),
            group: get(1),
            level: get(2),
            k: int(3)?,
            predictor: get(4),
            status: get(5),
            n_eval: int(6)?,
            mae: opt(7)?,
            mse: opt(8)?,
            parse_failure_rate: opt(9)?,
            n_failed: int(10)?,
            demo_shortfall: int(11)?,
        });
    }
    Ok((header, rows))
}
