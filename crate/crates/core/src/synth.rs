//! Seeded synthetic corpora for tests, benches and demos.

use crate::corpus::{Dataset, RawRecord};
use crate::rng::SplitMix64;

const POSITIVE: &[&str] = &["great", "excellent", "solid", "reliable", "crisp", "sturdy", "warm"];
const NEGATIVE: &[&str] = &["flimsy", "noisy", "broken", "dull", "cheap", "awkward", "weak"];
const NOUNS: &[&str] = &["sound", "build", "cable", "strings", "tuner", "finish", "case", "knobs"];

fn review_text(rng: &mut SplitMix64, rating: f64, serial: usize) -> String {
    let words = if rating >= 3.0 { POSITIVE } else { NEGATIVE };
    let clauses = 1 + rng.below(4) as usize;
    let mut text = format!("Review {serial}:");
    for _ in 0..clauses {
        let noun = NOUNS[rng.below(NOUNS.len() as u64) as usize];
        let adj = words[rng.below(words.len() as u64) as usize];
        text.push_str(&format!(" The {noun} is {adj}."));
    }
    text
}

/// `n` reviews over uniformly drawn users and items, integer ratings.
pub fn uniform_corpus(n: usize, users: usize, items: usize, seed: u64) -> Dataset {
    let mut rng = SplitMix64::new(seed);
    let records: Vec<RawRecord> = (0..n)
        .map(|k| {
            let rating = 1.0 + rng.below(5) as f64;
            RawRecord {
                user: format!("U{}", rng.below(users.max(1) as u64)),
                item: format!("I{}", rng.below(items.max(1) as u64)),
                rating,
                text: review_text(&mut rng, rating, k),
                timestamp: Some(1_300_000_000 + k as i64 * 60),
                review_index: k,
            }
        })
        .collect();
    Dataset::from_records(records)
}

/// Reviews with skewed user activity and latent user/item quality, so that
/// cold-start buckets are populated and ratings carry signal.
pub fn review_corpus(n: usize, users: usize, items: usize, seed: u64) -> Dataset {
    let mut rng = SplitMix64::new(seed);
    let users = users.max(1);
    let items = items.max(1);
    let user_bias: Vec<f64> = (0..users).map(|_| rng.next_f64() * 2.0 - 1.0).collect();
    let item_bias: Vec<f64> = (0..items).map(|_| rng.next_f64() * 2.0 - 1.0).collect();
    let records: Vec<RawRecord> = (0..n)
        .map(|k| {
            // squaring a uniform draw concentrates activity on low ids
            let x = rng.next_f64();
            let u = ((x * x) * users as f64) as usize % users;
            let i = rng.below(items as u64) as usize;
            let noise = rng.next_f64() - 0.5;
            let rating = (3.5 + user_bias[u] + item_bias[i] + noise).round().clamp(1.0, 5.0);
            RawRecord {
                user: format!("U{u}"),
                item: format!("I{i}"),
                rating,
                text: review_text(&mut rng, rating, k),
                timestamp: Some(1_300_000_000 + k as i64 * 3600),
                review_index: k,
            }
        })
        .collect();
    Dataset::from_records(records)
}

/// Every cell of a rank-1 matrix `r(u,i) = a_u · b_i` with factors drawn
/// from `[1, √5]`, plus a seeded half of the positions marked observed.
pub struct RankOneFixture {
    pub dataset: Dataset,
    pub observed: Vec<usize>,
    pub held_out: Vec<usize>,
}

pub fn rank_one(users: usize, items: usize, observed_fraction: f64, seed: u64) -> RankOneFixture {
    let mut rng = SplitMix64::new(seed);
    let span = 5f64.sqrt() - 1.0;
    let a: Vec<f64> = (0..users).map(|_| 1.0 + span * rng.next_f64()).collect();
    let b: Vec<f64> = (0..items).map(|_| 1.0 + span * rng.next_f64()).collect();
    let mut records = Vec::with_capacity(users * items);
    for (u, au) in a.iter().enumerate() {
        for (i, bi) in b.iter().enumerate() {
            let k = records.len();
            records.push(RawRecord {
                user: format!("U{u}"),
                item: format!("I{i}"),
                rating: (au * bi).clamp(1.0, 5.0),
                text: format!("cell {u},{i}"),
                timestamp: None,
                review_index: k,
            });
        }
    }
    let dataset = Dataset::from_records(records);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let m = crate::rng::floor_fraction(order.len(), observed_fraction);
    rng.select(&mut order, m);
    let mut observed = order[..m].to_vec();
    let mut held_out = order[m..].to_vec();
    observed.sort_unstable();
    held_out.sort_unstable();
    RankOneFixture { dataset, observed, held_out }
}
