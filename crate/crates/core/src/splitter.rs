//! Seeded train/validation/test partition at review granularity.
//!
//! Positions `0..N` are shuffled with [`SplitMix64`] (descending
//! Fisher–Yates) seeded by `SplitSpec::seed`. The first
//! `N - floor(N·val) - floor(N·test)` shuffled positions form the training
//! fold, the next `floor(N·val)` the validation fold and the last
//! `floor(N·test)` the test fold. Each fold is then sorted ascending.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Dataset;
use crate::rng::{floor_fraction, SplitMix64};

#[derive(Debug, Error)]
pub enum SplitError {
    #[error("split ratios {0:?} must be finite, non-negative and sum to 1")]
    InvalidRatios([f64; 3]),
    #[error("manifest row {row}: {message}")]
    Manifest { row: usize, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    /// train, validation, test
    pub ratios: [f64; 3],
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { seed: 0, ratios: [0.8, 0.1, 0.1] }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), SplitError> {
        let ok = self.ratios.iter().all(|r| r.is_finite() && *r >= 0.0)
            && (self.ratios.iter().sum::<f64>() - 1.0).abs() <= 1e-9;
        if ok { Ok(()) } else { Err(SplitError::InvalidRatios(self.ratios)) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fold {
    Train,
    Validation,
    Test,
}

impl Fold {
    pub fn as_str(self) -> &'static str {
        match self {
            Fold::Train => "train",
            Fold::Validation => "validation",
            Fold::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitResult {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub spec: SplitSpec,
}

impl SplitResult {
    pub fn fold_of(&self, n: usize) -> Vec<Option<Fold>> {
        let mut out = vec![None; n];
        for (fold, list) in [(Fold::Train, &self.train), (Fold::Validation, &self.validation), (Fold::Test, &self.test)] {
            for &p in list {
                out[p] = Some(fold);
            }
        }
        out
    }

    /// Manifest CSV: `review_index,fold`, in dataset order.
    pub fn write_manifest<W: Write>(&self, dataset: &Dataset, out: W) -> Result<(), SplitError> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(["review_index", "fold"])?;
        for (p, fold) in self.fold_of(dataset.len()).into_iter().enumerate() {
            if let Some(f) = fold {
                w.write_record([dataset.review(p).review_index.to_string().as_str(), f.as_str()])?;
            }
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// Rebuilds a split from a manifest written for the same dataset.
    pub fn read_manifest<R: Read>(dataset: &Dataset, spec: SplitSpec, input: R) -> Result<SplitResult, SplitError> {
        let lookup = dataset.position_of_review_index();
        let mut res = SplitResult { train: vec![], validation: vec![], test: vec![], spec };
        let mut rdr = csv::Reader::from_reader(input);
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let bad = |message: String| SplitError::Manifest { row, message };
            let idx: usize = rec.get(0).unwrap_or("").parse().map_err(|_| bad("bad review_index".into()))?;
            let pos = *lookup.get(&idx).ok_or_else(|| bad(format!("review_index {idx} not in dataset")))?;
            match rec.get(1).unwrap_or("") {
                "train" => res.train.push(pos),
                "validation" => res.validation.push(pos),
                "test" => res.test.push(pos),
                other => return Err(bad(format!("unknown fold `{other}`"))),
            }
        }
        for list in [&mut res.train, &mut res.validation, &mut res.test] {
            list.sort_unstable();
        }
        Ok(res)
    }
}

pub fn split(dataset: &Dataset, spec: SplitSpec) -> Result<SplitResult, SplitError> {
    spec.validate()?;
    let n = dataset.len();
    let n_val = floor_fraction(n, spec.ratios[1]);
    let n_test = floor_fraction(n, spec.ratios[2]).min(n - n_val);
    let n_train = n - n_val - n_test;

    let mut order: Vec<usize> = (0..n).collect();
    SplitMix64::new(spec.seed).shuffle(&mut order);

    let mut train = order[..n_train].to_vec();
    let mut validation = order[n_train..n_train + n_val].to_vec();
    let mut test = order[n_train + n_val..].to_vec();
    train.sort_unstable();
    validation.sort_unstable();
    test.sort_unstable();
    Ok(SplitResult { train, validation, test, spec })
}
