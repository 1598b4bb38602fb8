use std::collections::BTreeSet;

use proptest::prelude::*;
use revbench::corpus::{ingest_reader, Format, IngestOptions, RawRecord};
use revbench::kcore::{kcore_filter, kcore_positions, CoreSpec};
use revbench::perturb::{self, PerturbKind, PerturbSpec};
use revbench::splitter::{split, SplitSpec};
use revbench::Dataset;

fn graph() -> impl Strategy<Value = Vec<(u8, u8)>> {
    prop::collection::vec((0u8..12, 0u8..12), 0..80)
}

fn dataset(edges: &[(u8, u8)]) -> Dataset {
    Dataset::from_records(edges.iter().enumerate().map(|(n, &(u, i))| RawRecord {
        user: format!("u{u}"),
        item: format!("i{i}"),
        rating: 1.0 + (n % 5) as f64,
        text: format!("review {n}"),
        timestamp: Some(n as i64),
        review_index: n,
    }))
}

fn indices(ds: &Dataset) -> BTreeSet<usize> {
    ds.reviews().iter().map(|r| r.review_index).collect()
}

fn review_text() -> impl Strategy<Value = String> {
    // commas, quotes, newlines and non-ASCII all have to survive CSV
    prop::string::string_regex("[a-zA-Z0-9 ,\"'\n\u{e9}\u{4e2d}]{1,30}")
        .unwrap()
        .prop_filter("non-blank", |s| !s.trim().is_empty())
}

proptest! {
    #[test]
    fn core_is_idempotent(edges in graph(), k in 0usize..5) {
        let once = kcore_filter(&dataset(&edges), CoreSpec { k });
        let twice = kcore_filter(&once, CoreSpec { k });
        prop_assert_eq!(indices(&once), indices(&twice));
    }

    #[test]
    fn cores_are_nested(edges in graph(), k in 0usize..5) {
        let ds = dataset(&edges);
        let outer: BTreeSet<usize> = kcore_positions(&ds, CoreSpec { k }).into_iter().collect();
        let inner: BTreeSet<usize> = kcore_positions(&ds, CoreSpec { k: k + 1 }).into_iter().collect();
        prop_assert!(inner.is_subset(&outer));
    }

    #[test]
    fn core_ignores_record_order(edges in graph(), k in 1usize..5, seed in any::<u64>()) {
        let ds = dataset(&edges);
        let mut order: Vec<usize> = (0..ds.len()).collect();
        revbench::rng::SplitMix64::new(seed).shuffle(&mut order);
        let shuffled = Dataset::from_records(order.iter().map(|&p| ds.raw_record(p)));
        prop_assert_eq!(indices(&kcore_filter(&ds, CoreSpec { k })), indices(&kcore_filter(&shuffled, CoreSpec { k })));
    }

    #[test]
    fn core_degrees_hold(edges in graph(), k in 1usize..5) {
        let core = kcore_filter(&dataset(&edges), CoreSpec { k });
        for u in 0..core.user_count() {
            prop_assert!(core.user_positions(revbench::UserId(u as u32)).len() >= k);
        }
        for i in 0..core.item_count() {
            prop_assert!(core.item_positions(revbench::ItemId(i as u32)).len() >= k);
        }
    }

    #[test]
    fn csv_round_trip(rows in prop::collection::vec((0u8..20, 0u8..20, 1u8..=5, review_text(), any::<Option<u32>>()), 0..40)) {
        let ds = Dataset::from_records(rows.iter().enumerate().map(|(n, (u, i, r, t, ts))| RawRecord {
            user: format!("user {u}"),
            item: format!("B00{i}"),
            rating: *r as f64,
            text: t.clone(),
            timestamp: ts.map(i64::from),
            review_index: n,
        }));
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let back = ingest_reader(&buf[..], Format::GenericCsv, IngestOptions::default()).unwrap();
        prop_assert!(back.errors.is_empty());
        prop_assert_eq!(back.dataset, ds);
    }

    #[test]
    fn perturbation_stays_in_training_fold(edges in graph(), f in 0.0f64..=1.0, seed in any::<u64>()) {
        let ds = dataset(&edges);
        let sp = split(&ds, SplitSpec { seed, ratios: [0.8, 0.1, 0.1] }).unwrap();
        for kind in [PerturbKind::Remove, PerturbKind::Distort] {
            let out = perturb::apply(&ds, &sp.train, PerturbSpec { kind, fraction: f, seed }).unwrap().dataset;
            for &p in sp.validation.iter().chain(&sp.test) {
                prop_assert_eq!(&out.review(p).text, &ds.review(p).text);
            }
        }
    }
}
