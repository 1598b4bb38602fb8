use std::collections::BTreeMap;

use crate::corpus::View;

/// Test positions grouped by the training-fold review count `f` of their
/// user. Bucket 0 holds users absent from training; users above `max_f`
/// are listed in `excluded`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColdStartStrata {
    pub max_f: usize,
    /// One entry per `f` in `0..=max_f`, possibly empty.
    pub buckets: BTreeMap<usize, Vec<usize>>,
    pub excluded: Vec<usize>,
}

pub fn cold_start_strata(train: &View<'_>, test: &View<'_>, max_f: usize) -> ColdStartStrata {
    let mut buckets: BTreeMap<usize, Vec<usize>> = (0..=max_f).map(|f| (f, Vec::new())).collect();
    let mut excluded = Vec::new();
    let ds = test.dataset();
    for &p in test.positions() {
        let f = train.user_positions(ds.review(p).user).len();
        match buckets.get_mut(&f) {
            Some(b) => b.push(p),
            None => excluded.push(p),
        }
    }
    ColdStartStrata { max_f, buckets, excluded }
}
