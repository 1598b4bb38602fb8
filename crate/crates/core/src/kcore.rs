//! Bipartite k-core filtering over the user–item review graph.
//!
//! Degrees count review records, so a duplicated (user, item) pair
//! contributes twice. The result is the unique maximal sub-dataset in which
//! every surviving user and item has at least `k` reviews.

use std::collections::{BTreeMap, VecDeque};

use crate::corpus::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CoreSpec {
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CoreStats {
    pub users: usize,
    pub items: usize,
    pub reviews: usize,
    /// degree → number of users with that degree
    pub user_degrees: BTreeMap<usize, usize>,
    pub item_degrees: BTreeMap<usize, usize>,
}

#[derive(Clone, Copy)]
enum Node {
    User(usize),
    Item(usize),
}

/// Positions of the reviews that survive the k-core, ascending.
pub fn kcore_positions(dataset: &Dataset, spec: CoreSpec) -> Vec<usize> {
    let k = spec.k;
    let n_users = dataset.user_count();
    let n_items = dataset.item_count();
    let mut user_deg: Vec<usize> = (0..n_users).map(|u| dataset.user_positions(crate::UserId(u as u32)).len()).collect();
    let mut item_deg: Vec<usize> = (0..n_items).map(|i| dataset.item_positions(crate::ItemId(i as u32)).len()).collect();
    let mut user_gone = vec![false; n_users];
    let mut item_gone = vec![false; n_items];
    let mut edge_gone = vec![false; dataset.len()];

    // Worklist of nodes already below k; a node is queued at most once
    // because it is marked removed when queued.
    let mut queue = VecDeque::new();
    for (u, &d) in user_deg.iter().enumerate() {
        if d < k {
            user_gone[u] = true;
            queue.push_back(Node::User(u));
        }
    }
    for (i, &d) in item_deg.iter().enumerate() {
        if d < k {
            item_gone[i] = true;
            queue.push_back(Node::Item(i));
        }
    }

    while let Some(node) = queue.pop_front() {
        let edges = match node {
            Node::User(u) => dataset.user_positions(crate::UserId(u as u32)),
            Node::Item(i) => dataset.item_positions(crate::ItemId(i as u32)),
        };
        for &p in edges {
            if edge_gone[p] {
                continue;
            }
            edge_gone[p] = true;
            let r = dataset.review(p);
            match node {
                Node::User(_) => {
                    let i = r.item.index();
                    item_deg[i] -= 1;
                    if !item_gone[i] && item_deg[i] < k {
                        item_gone[i] = true;
                        queue.push_back(Node::Item(i));
                    }
                }
                Node::Item(_) => {
                    let u = r.user.index();
                    user_deg[u] -= 1;
                    if !user_gone[u] && user_deg[u] < k {
                        user_gone[u] = true;
                        queue.push_back(Node::User(u));
                    }
                }
            }
        }
    }

    (0..dataset.len()).filter(|&p| !edge_gone[p]).collect()
}

pub fn kcore_filter(dataset: &Dataset, spec: CoreSpec) -> Dataset {
    if spec.k == 0 {
        return dataset.clone();
    }
    dataset.subset(kcore_positions(dataset, spec))
}

pub fn core_stats(dataset: &Dataset) -> CoreStats {
    let mut stats = CoreStats { reviews: dataset.len(), ..Default::default() };
    for u in 0..dataset.user_count() {
        let d = dataset.user_positions(crate::UserId(u as u32)).len();
        if d > 0 {
            stats.users += 1;
            *stats.user_degrees.entry(d).or_default() += 1;
        }
    }
    for i in 0..dataset.item_count() {
        let d = dataset.item_positions(crate::ItemId(i as u32)).len();
        if d > 0 {
            stats.items += 1;
            *stats.item_degrees.entry(d).or_default() += 1;
        }
    }
    stats
}

/// One CSV row per k: `k,users,items,reviews`.
pub fn write_core_table<W: std::io::Write>(dataset: &Dataset, ks: &[usize], out: W) -> Result<(), csv::Error> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(["k", "users", "items", "reviews"])?;
    for &k in ks {
        let s = core_stats(&kcore_filter(dataset, CoreSpec { k }));
        w.write_record([k.to_string(), s.users.to_string(), s.items.to_string(), s.reviews.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
