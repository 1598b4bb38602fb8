#![allow(dead_code)]

use std::fs::File;
use std::path::{Path, PathBuf};

use revbench::Dataset;

/// Writes `ds` as generic CSV and returns the path.
pub fn write_corpus(dir: &Path, name: &str, ds: &Dataset) -> PathBuf {
    let path = dir.join(name);
    ds.write_csv(File::create(&path).unwrap()).unwrap();
    path
}

/// A config over `data` with the given predictor and scenario tables
/// appended verbatim.
pub fn config_toml(data: &Path, out: &Path, k: usize, tables: &str) -> String {
    format!(
        r#"version = 1
seed = 11
output_dir = "{}"

[dataset]
path = "{}"
format = "generic-csv"

[core]
k = {k}

[split]
seed = 5
ratios = [0.8, 0.1, 0.1]

{tables}
"#,
        out.display(),
        data.display()
    )
}

pub const MOCK: &str = r#"backend = { kind = "mock", mock = "user-mean", max_in_flight = 8 }"#;
