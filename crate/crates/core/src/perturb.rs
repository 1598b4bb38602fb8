//! Review-text perturbations applied to the training fold: blanking a
//! fraction of texts (removal) or permuting texts among a fraction of
//! interactions (distortion). Ratings, ids and fold membership never change.
//!
//! Both operations draw `floor(fraction·N)` training positions with the
//! partial Fisher–Yates walk of [`SplitMix64::select`] over the ascending
//! training positions. Distortion then shuffles a copy of the selected
//! positions with [`SplitMix64::shuffle`] on the same generator and moves the
//! text of `shuffled[k]` onto `selected[k]`. The permutation is uniform, so
//! some texts may stay in place.

use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Dataset;
use crate::rng::{floor_fraction, SplitMix64};

/// Text left behind by removal.
pub const REMOVED_TEXT: &str = "";

#[derive(Debug, Error)]
pub enum PerturbError {
    #[error("fraction {0} outside [0, 1]")]
    InvalidFraction(f64),
    #[error("expected a {expected} spec, got {got}")]
    KindMismatch { expected: PerturbKind, got: PerturbKind },
    #[error("manifest row {row}: {message}")]
    Manifest { row: usize, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerturbKind {
    Remove,
    Distort,
}

impl fmt::Display for PerturbKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PerturbKind::Remove => "remove",
            PerturbKind::Distort => "distort",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbSpec {
    pub kind: PerturbKind,
    pub fraction: f64,
    pub seed: u64,
}

impl PerturbSpec {
    fn check(&self, expected: PerturbKind) -> Result<(), PerturbError> {
        if self.kind != expected {
            return Err(PerturbError::KindMismatch { expected, got: self.kind });
        }
        if !(0.0..=1.0).contains(&self.fraction) {
            return Err(PerturbError::InvalidFraction(self.fraction));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub review_index: usize,
    pub action: PerturbKind,
    /// For distortion, the review whose text now sits on this row.
    pub source_review_index: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Perturbation {
    pub dataset: Dataset,
    pub manifest: Vec<ManifestRow>,
}

fn selection(train: &[usize], fraction: f64, rng: &mut SplitMix64) -> Vec<usize> {
    let mut pool = train.to_vec();
    pool.sort_unstable();
    let m = floor_fraction(pool.len(), fraction);
    rng.select(&mut pool, m).to_vec()
}

pub fn remove_reviews(dataset: &Dataset, train: &[usize], spec: PerturbSpec) -> Result<Perturbation, PerturbError> {
    spec.check(PerturbKind::Remove)?;
    let mut rng = SplitMix64::new(spec.seed);
    let mut chosen = selection(train, spec.fraction, &mut rng);
    chosen.sort_unstable();
    let mut out = dataset.clone();
    let mut manifest = Vec::with_capacity(chosen.len());
    for &p in &chosen {
        out.set_text(p, REMOVED_TEXT.to_owned());
        manifest.push(ManifestRow {
            review_index: dataset.review(p).review_index,
            action: PerturbKind::Remove,
            source_review_index: None,
        });
    }
    Ok(Perturbation { dataset: out, manifest })
}

pub fn distort_reviews(dataset: &Dataset, train: &[usize], spec: PerturbSpec) -> Result<Perturbation, PerturbError> {
    spec.check(PerturbKind::Distort)?;
    let mut rng = SplitMix64::new(spec.seed);
    let targets = selection(train, spec.fraction, &mut rng);
    let mut sources = targets.clone();
    rng.shuffle(&mut sources);

    let mut out = dataset.clone();
    let mut moves: Vec<(usize, usize)> = targets.into_iter().zip(sources).collect();
    moves.sort_unstable();
    let mut manifest = Vec::with_capacity(moves.len());
    for &(dst, src) in &moves {
        out.set_text(dst, dataset.review(src).text.clone());
        manifest.push(ManifestRow {
            review_index: dataset.review(dst).review_index,
            action: PerturbKind::Distort,
            source_review_index: Some(dataset.review(src).review_index),
        });
    }
    Ok(Perturbation { dataset: out, manifest })
}

pub fn apply(dataset: &Dataset, train: &[usize], spec: PerturbSpec) -> Result<Perturbation, PerturbError> {
    match spec.kind {
        PerturbKind::Remove => remove_reviews(dataset, train, spec),
        PerturbKind::Distort => distort_reviews(dataset, train, spec),
    }
}

/// Re-applies a manifest to the unperturbed dataset.
pub fn replay(dataset: &Dataset, manifest: &[ManifestRow]) -> Result<Dataset, PerturbError> {
    let lookup = dataset.position_of_review_index();
    let resolve = |row: usize, idx: usize| {
        lookup.get(&idx).copied().ok_or(PerturbError::Manifest { row, message: format!("review_index {idx} not in dataset") })
    };
    let mut out = dataset.clone();
    for (row, m) in manifest.iter().enumerate() {
        let dst = resolve(row, m.review_index)?;
        let text = match (m.action, m.source_review_index) {
            (PerturbKind::Remove, _) => REMOVED_TEXT.to_owned(),
            (PerturbKind::Distort, Some(src)) => dataset.review(resolve(row, src)?).text.clone(),
            (PerturbKind::Distort, None) => {
                return Err(PerturbError::Manifest { row, message: "distort row without source".into() })
            }
        };
        out.set_text(dst, text);
    }
    Ok(out)
}

/// Manifest CSV: `review_index,action,source_review_index`.
pub fn write_manifest<W: Write>(manifest: &[ManifestRow], out: W) -> Result<(), PerturbError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(["review_index", "action", "source_review_index"])?;
    for m in manifest {
        let src = m.source_review_index.map(|s| s.to_string()).unwrap_or_default();
        w.write_record([m.review_index.to_string(), m.action.to_string(), src])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_manifest<R: Read>(input: R) -> Result<Vec<ManifestRow>, PerturbError> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |message: &str| PerturbError::Manifest { row, message: message.to_owned() };
        let review_index = rec.get(0).unwrap_or("").parse().map_err(|_| bad("bad review_index"))?;
        let action = match rec.get(1).unwrap_or("") {
            "remove" => PerturbKind::Remove,
            "distort" => PerturbKind::Distort,
            _ => return Err(bad("unknown action")),
        };
        let source_review_index = match rec.get(2).unwrap_or("") {
            "" => None,
            s => Some(s.parse().map_err(|_| bad("bad source_review_index"))?),
        };
        rows.push(ManifestRow { review_index, action, source_review_index });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;
    use proptest::prelude::*;

    fn spec(kind: PerturbKind, fraction: f64) -> PerturbSpec {
        PerturbSpec { kind, fraction, seed: 17 }
    }

    fn all(ds: &Dataset) -> Vec<usize> {
        (0..ds.len()).collect()
    }

    #[test]
    fn zero_fraction_is_identity() {
        let ds = synth::uniform_corpus(50, 5, 5, 1);
        for kind in [PerturbKind::Remove, PerturbKind::Distort] {
            let p = apply(&ds, &all(&ds), spec(kind, 0.0)).unwrap();
            assert_eq!(p.dataset, ds);
            assert!(p.manifest.is_empty());
        }
    }

    #[test]
    fn full_removal() {
        let ds = synth::uniform_corpus(7, 3, 3, 2);
        let p = remove_reviews(&ds, &all(&ds), spec(PerturbKind::Remove, 1.0)).unwrap();
        assert!(p.dataset.reviews().iter().all(|r| r.text.is_empty()));
        let before: Vec<f64> = ds.reviews().iter().map(|r| r.rating).collect();
        let after: Vec<f64> = p.dataset.reviews().iter().map(|r| r.rating).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn half_removal_is_repeatable() {
        let ds = synth::uniform_corpus(10, 3, 3, 3);
        let a = remove_reviews(&ds, &all(&ds), spec(PerturbKind::Remove, 0.5)).unwrap();
        let b = remove_reviews(&ds, &all(&ds), spec(PerturbKind::Remove, 0.5)).unwrap();
        assert_eq!(a.dataset.reviews().iter().filter(|r| r.text.is_empty()).count(), 5);
        assert_eq!(a.manifest, b.manifest);
    }

    #[test]
    fn only_train_positions_touched() {
        let ds = synth::uniform_corpus(20, 4, 4, 4);
        let train: Vec<usize> = (0..10).collect();
        let p = remove_reviews(&ds, &train, spec(PerturbKind::Remove, 1.0)).unwrap();
        for pos in 10..20 {
            assert_eq!(p.dataset.review(pos), ds.review(pos));
        }
    }

    #[test]
    fn four_reviews_half_distortion_matches_reference_prng() {
        let ds = synth::uniform_corpus(4, 2, 2, 5);
        let p = distort_reviews(&ds, &all(&ds), spec(PerturbKind::Distort, 0.5)).unwrap();

        // Reference: the documented walk spelled out step by step.
        let mut rng = SplitMix64::new(17);
        let mut pool = vec![0usize, 1, 2, 3];
        for i in 0..2 {
            let j = i + (rng.below((4 - i) as u64) as usize);
            pool.swap(i, j);
        }
        let targets = [pool[0], pool[1]];
        let mut sources = targets;
        let j = rng.below(2) as usize;
        sources.swap(1, j);
        for k in 0..2 {
            assert_eq!(p.dataset.review(targets[k]).text, ds.review(sources[k]).text);
        }
        let untouched: Vec<usize> = (0..4).filter(|x| !targets.contains(x)).collect();
        for pos in untouched {
            assert_eq!(p.dataset.review(pos).text, ds.review(pos).text);
        }
    }

    #[test]
    fn bad_specs() {
        let ds = synth::uniform_corpus(4, 2, 2, 5);
        assert!(matches!(remove_reviews(&ds, &[], spec(PerturbKind::Distort, 0.5)), Err(PerturbError::KindMismatch { .. })));
        assert!(matches!(apply(&ds, &[], spec(PerturbKind::Remove, 1.5)), Err(PerturbError::InvalidFraction(_))));
    }

    #[test]
    fn manifest_replays() {
        let ds = synth::uniform_corpus(40, 5, 5, 6);
        for kind in [PerturbKind::Remove, PerturbKind::Distort] {
            let p = apply(&ds, &all(&ds), spec(kind, 0.75)).unwrap();
            let mut buf = Vec::new();
            write_manifest(&p.manifest, &mut buf).unwrap();
            let rows = read_manifest(&buf[..]).unwrap();
            assert_eq!(rows, p.manifest);
            assert_eq!(replay(&ds, &rows).unwrap(), p.dataset);
        }
    }

    proptest! {
        #[test]
        fn invariants(n in 0usize..200, f_idx in 0usize..5, seed: u64) {
            let fraction = [0.0, 0.25, 0.5, 0.75, 1.0][f_idx];
            let ds = synth::uniform_corpus(n, 9, 9, seed);
            let train = all(&ds);
            let rem = remove_reviews(&ds, &train, PerturbSpec { kind: PerturbKind::Remove, fraction, seed }).unwrap();
            let empties = rem.dataset.reviews().iter().filter(|r| r.text.is_empty()).count();
            prop_assert_eq!(empties, floor_fraction(n, fraction));

            let dis = distort_reviews(&ds, &train, PerturbSpec { kind: PerturbKind::Distort, fraction, seed }).unwrap();
            let mut a: Vec<&str> = ds.reviews().iter().map(|r| r.text.as_str()).collect();
            let mut b: Vec<&str> = dis.dataset.reviews().iter().map(|r| r.text.as_str()).collect();
            a.sort_unstable();
            b.sort_unstable();
            prop_assert_eq!(a, b);
            for (x, y) in ds.reviews().iter().zip(dis.dataset.reviews()) {
                prop_assert_eq!(x.rating.to_bits(), y.rating.to_bits());
                prop_assert_eq!((x.user, x.item), (y.user, y.item));
            }
        }
    }
}
