//! Text-blind rating predictors used as reference points: global mean, user
//! mean, a user/item bias model and biased matrix factorization, the latter
//! two fitted by SGD on squared error with L2 regularization.
//!
//! Scores are clamped to `[1, 5]` at prediction time only. Users or items
//! unseen in training contribute zero offsets and zero factors.

use std::collections::HashMap;
use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{Dataset, ItemId, UserId, View};
use crate::rng::SplitMix64;

const MAGIC: &[u8; 4] = b"RVBM";
const CHECKPOINT_VERSION: u16 = 1;
const INIT_STD: f64 = 0.1;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("cannot fit on an empty training fold")]
    EmptyTrain,
    #[error("factor dimension must be at least 1")]
    ZeroDim,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    GlobalMean,
    UserMean,
    Bias,
    Mf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyper {
    pub dim: usize,
    pub lr: f64,
    pub reg: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper { dim: 16, lr: 0.005, reg: 0.02, epochs: 30, seed: 0 }
    }
}

pub trait RatingModel: Send + Sync {
    /// Unclamped score.
    fn score(&self, user: UserId, item: ItemId) -> f64;

    fn predict(&self, user: UserId, item: ItemId) -> f64 {
        self.score(user, item).clamp(1.0, 5.0)
    }
}

fn train_mean(train: &View<'_>) -> Result<f64, FitError> {
    train.mean_rating().ok_or(FitError::EmptyTrain)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalMean {
    pub mu: f64,
}

impl GlobalMean {
    pub fn fit(train: &View<'_>) -> Result<Self, FitError> {
        Ok(GlobalMean { mu: train_mean(train)? })
    }
}

impl RatingModel for GlobalMean {
    fn score(&self, _: UserId, _: ItemId) -> f64 {
        self.mu
    }
}

/// Each user's training mean; the global mean for unseen users.
#[derive(Debug, Clone, PartialEq)]
pub struct UserMean {
    pub mu: f64,
    pub means: HashMap<UserId, f64>,
}

impl UserMean {
    pub fn fit(train: &View<'_>) -> Result<Self, FitError> {
        let mu = train_mean(train)?;
        let means = train.users().filter_map(|u| train.user_mean(u).map(|m| (u, m))).collect();
        Ok(UserMean { mu, means })
    }
}

impl RatingModel for UserMean {
    fn score(&self, user: UserId, _: ItemId) -> f64 {
        self.means.get(&user).copied().unwrap_or(self.mu)
    }
}

/// `mu + b_u + b_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasModel {
    pub mu: f64,
    pub user_bias: HashMap<UserId, f64>,
    pub item_bias: HashMap<ItemId, f64>,
    pub hyper: Hyper,
}

impl RatingModel for BiasModel {
    fn score(&self, user: UserId, item: ItemId) -> f64 {
        self.mu + self.user_bias.get(&user).copied().unwrap_or(0.0) + self.item_bias.get(&item).copied().unwrap_or(0.0)
    }
}

pub fn fit_bias(train: &View<'_>, hyper: Hyper) -> Result<BiasModel, FitError> {
    let mu = train_mean(train)?;
    let ds = train.dataset();
    let mut bu = vec![0.0; ds.user_count()];
    let mut bi = vec![0.0; ds.item_count()];
    let mut order = train.positions().to_vec();
    let mut rng = SplitMix64::new(hyper.seed);
    for _ in 0..hyper.epochs {
        rng.shuffle(&mut order);
        for &p in &order {
            let r = ds.review(p);
            let (u, i) = (r.user.index(), r.item.index());
            let err = r.rating - (mu + bu[u] + bi[i]);
            bu[u] += hyper.lr * (err - hyper.reg * bu[u]);
            bi[i] += hyper.lr * (err - hyper.reg * bi[i]);
        }
    }
    Ok(BiasModel {
        mu,
        user_bias: train.users().map(|u| (u, bu[u.index()])).collect(),
        item_bias: train.items().map(|i| (i, bi[i.index()])).collect(),
        hyper,
    })
}

/// `mu + b_u + b_i + p_u · q_i` with one factor row per training user and item.
#[derive(Debug, Clone, PartialEq)]
pub struct MfModel {
    pub mu: f64,
    pub dim: usize,
    pub user_rows: HashMap<UserId, usize>,
    pub item_rows: HashMap<ItemId, usize>,
    pub user_bias: Vec<f64>,
    pub item_bias: Vec<f64>,
    /// row-major, `dim` values per row
    pub user_factors: Vec<f64>,
    pub item_factors: Vec<f64>,
    pub hyper: Hyper,
    /// Mean squared training error after each epoch.
    pub curve: Vec<f64>,
}

impl MfModel {
    pub fn user_factor(&self, u: UserId) -> Option<&[f64]> {
        self.user_rows.get(&u).map(|&r| &self.user_factors[r * self.dim..(r + 1) * self.dim])
    }

    pub fn item_factor(&self, i: ItemId) -> Option<&[f64]> {
        self.item_rows.get(&i).map(|&r| &self.item_factors[r * self.dim..(r + 1) * self.dim])
    }

    pub fn training_error(&self, train: &View<'_>) -> f64 {
        mean_squared_error(self, train)
    }
}

impl RatingModel for MfModel {
    fn score(&self, user: UserId, item: ItemId) -> f64 {
        let mut s = self.mu;
        let ur = self.user_rows.get(&user).copied();
        let ir = self.item_rows.get(&item).copied();
        if let Some(u) = ur {
            s += self.user_bias[u];
        }
        if let Some(i) = ir {
            s += self.item_bias[i];
        }
        if let (Some(u), Some(i)) = (ur, ir) {
            let d = self.dim;
            s += dot(&self.user_factors[u * d..(u + 1) * d], &self.item_factors[i * d..(i + 1) * d]);
        }
        s
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Unclamped mean squared error of `model` over a fold.
pub fn mean_squared_error<M: RatingModel + ?Sized>(model: &M, fold: &View<'_>) -> f64 {
    let ds = fold.dataset();
    let sum: f64 = fold
        .positions()
        .iter()
        .map(|&p| {
            let r = ds.review(p);
            (r.rating - model.score(r.user, r.item)).powi(2)
        })
        .sum();
    sum / fold.len().max(1) as f64
}

pub fn fit_mf(train: &View<'_>, hyper: Hyper) -> Result<MfModel, FitError> {
    if hyper.dim == 0 {
        return Err(FitError::ZeroDim);
    }
    let mu = train_mean(train)?;
    let ds = train.dataset();
    let d = hyper.dim;
    let user_rows: HashMap<UserId, usize> = train.users().enumerate().map(|(r, u)| (u, r)).collect();
    let item_rows: HashMap<ItemId, usize> = train.items().enumerate().map(|(r, i)| (i, r)).collect();

    let mut init = ChaCha8Rng::seed_from_u64(hyper.seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    let mut user_factors: Vec<f64> = (0..user_rows.len() * d).map(|_| normal.sample(&mut init)).collect();
    let mut item_factors: Vec<f64> = (0..item_rows.len() * d).map(|_| normal.sample(&mut init)).collect();
    let mut user_bias = vec![0.0; user_rows.len()];
    let mut item_bias = vec![0.0; item_rows.len()];

    // (user row, item row, rating) for the SGD loop
    let triples: Vec<(usize, usize, f64)> = train
        .positions()
        .iter()
        .map(|&p| {
            let r = ds.review(p);
            (user_rows[&r.user], item_rows[&r.item], r.rating)
        })
        .collect();
    let mut order: Vec<usize> = (0..triples.len()).collect();
    let mut rng = SplitMix64::new(hyper.seed);
    let (lr, reg) = (hyper.lr, hyper.reg);
    let mut curve = Vec::with_capacity(hyper.epochs);

    for _ in 0..hyper.epochs {
        rng.shuffle(&mut order);
        for &k in &order {
            let (u, i, rating) = triples[k];
            let (pu, qi) = (u * d, i * d);
            let pred = mu + user_bias[u] + item_bias[i] + dot(&user_factors[pu..pu + d], &item_factors[qi..qi + d]);
            let err = rating - pred;
            user_bias[u] += lr * (err - reg * user_bias[u]);
            item_bias[i] += lr * (err - reg * item_bias[i]);
            for f in 0..d {
                let p = user_factors[pu + f];
                let q = item_factors[qi + f];
                user_factors[pu + f] += lr * (err * q - reg * p);
                item_factors[qi + f] += lr * (err * p - reg * q);
            }
        }
        let sse: f64 = triples
            .iter()
            .map(|&(u, i, r)| {
                let pred = mu + user_bias[u] + item_bias[i] + dot(&user_factors[u * d..u * d + d], &item_factors[i * d..i * d + d]);
                (r - pred).powi(2)
            })
            .sum();
        curve.push(sse / triples.len() as f64);
    }

    Ok(MfModel { mu, dim: d, user_rows, item_rows, user_bias, item_bias, user_factors, item_factors, hyper, curve })
}

/// Any fitted baseline.
#[derive(Debug, Clone, PartialEq)]
pub enum Baseline {
    GlobalMean(GlobalMean),
    UserMean(UserMean),
    Bias(BiasModel),
    Mf(MfModel),
}

impl Baseline {
    pub fn fit(kind: BaselineKind, train: &View<'_>, hyper: Hyper) -> Result<Self, FitError> {
        Ok(match kind {
            BaselineKind::GlobalMean => Baseline::GlobalMean(GlobalMean::fit(train)?),
            BaselineKind::UserMean => Baseline::UserMean(UserMean::fit(train)?),
            BaselineKind::Bias => Baseline::Bias(fit_bias(train, hyper)?),
            BaselineKind::Mf => Baseline::Mf(fit_mf(train, hyper)?),
        })
    }

    pub fn kind(&self) -> BaselineKind {
        match self {
            Baseline::GlobalMean(_) => BaselineKind::GlobalMean,
            Baseline::UserMean(_) => BaselineKind::UserMean,
            Baseline::Bias(_) => BaselineKind::Bias,
            Baseline::Mf(_) => BaselineKind::Mf,
        }
    }
}

impl RatingModel for Baseline {
    fn score(&self, user: UserId, item: ItemId) -> f64 {
        match self {
            Baseline::GlobalMean(m) => m.score(user, item),
            Baseline::UserMean(m) => m.score(user, item),
            Baseline::Bias(m) => m.score(user, item),
            Baseline::Mf(m) => m.score(user, item),
        }
    }
}

/// 64-bit fingerprint of a dataset's id tables; checkpoints refer to
/// interned ids and are only valid against the same tables.
pub fn dataset_fingerprint(ds: &Dataset) -> u64 {
    let mut h = Sha256::new();
    for name in ds.users().iter() {
        h.update(name.as_bytes());
        h.update([0]);
    }
    h.update([1]);
    for name in ds.items().iter() {
        h.update(name.as_bytes());
        h.update([0]);
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn kind_code(kind: BaselineKind) -> u8 {
    match kind {
        BaselineKind::GlobalMean => 0,
        BaselineKind::UserMean => 1,
        BaselineKind::Bias => 2,
        BaselineKind::Mf => 3,
    }
}

/// Flat little-endian checkpoint:
///
/// ```text
/// "RVBM" | version u16 | kind u8 | dim u32 | fingerprint u64 | mu f64
/// n_users u32 | n_users × (user id u32, value f64, dim × f64)
/// n_items u32 | n_items × (item id u32, value f64, dim × f64)
/// ```
///
/// `value` is the bias (the mean itself for the user-mean model). Rows are
/// written in ascending id order.
pub fn save_checkpoint<W: Write>(model: &Baseline, fingerprint: u64, mut out: W) -> Result<(), FitError> {
    let (mu, dim) = match model {
        Baseline::GlobalMean(m) => (m.mu, 0),
        Baseline::UserMean(m) => (m.mu, 0),
        Baseline::Bias(m) => (m.mu, 0),
        Baseline::Mf(m) => (m.mu, m.dim),
    };
    out.write_all(MAGIC)?;
    out.write_u16::<LittleEndian>(CHECKPOINT_VERSION)?;
    out.write_u8(kind_code(model.kind()))?;
    out.write_u32::<LittleEndian>(dim as u32)?;
    out.write_u64::<LittleEndian>(fingerprint)?;
    out.write_f64::<LittleEndian>(mu)?;

    let mut users: Vec<(u32, f64, Vec<f64>)> = Vec::new();
    let mut items: Vec<(u32, f64, Vec<f64>)> = Vec::new();
    match model {
        Baseline::GlobalMean(_) => {}
        Baseline::UserMean(m) => users.extend(m.means.iter().map(|(u, &v)| (u.0, v, vec![]))),
        Baseline::Bias(m) => {
            users.extend(m.user_bias.iter().map(|(u, &v)| (u.0, v, vec![])));
            items.extend(m.item_bias.iter().map(|(i, &v)| (i.0, v, vec![])));
        }
        Baseline::Mf(m) => {
            users.extend(m.user_rows.iter().map(|(u, &r)| (u.0, m.user_bias[r], m.user_factor(*u).unwrap().to_vec())));
            items.extend(m.item_rows.iter().map(|(i, &r)| (i.0, m.item_bias[r], m.item_factor(*i).unwrap().to_vec())));
        }
    }
    for table in [&mut users, &mut items] {
        table.sort_by_key(|row| row.0);
        out.write_u32::<LittleEndian>(table.len() as u32)?;
        for (id, value, factors) in table.iter() {
            out.write_u32::<LittleEndian>(*id)?;
            out.write_f64::<LittleEndian>(*value)?;
            for f in factors {
                out.write_f64::<LittleEndian>(*f)?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

type Rows = Vec<(u32, f64, Vec<f64>)>;

fn read_rows<R: Read>(input: &mut R, dim: usize) -> Result<Rows, FitError> {
    let n = input.read_u32::<LittleEndian>()? as usize;
    let mut rows = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let id = input.read_u32::<LittleEndian>()?;
        let value = input.read_f64::<LittleEndian>()?;
        let factors = (0..dim).map(|_| input.read_f64::<LittleEndian>()).collect::<Result<Vec<_>, _>>()?;
        rows.push((id, value, factors));
    }
    Ok(rows)
}

/// Reads a checkpoint, refusing one written for different id tables.
/// Training-only metadata (hyperparameters, curve) is not stored.
pub fn load_checkpoint<R: Read>(mut input: R, fingerprint: u64) -> Result<Baseline, FitError> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(FitError::Checkpoint("bad magic".into()));
    }
    let version = input.read_u16::<LittleEndian>()?;
    if version != CHECKPOINT_VERSION {
        return Err(FitError::Checkpoint(format!("unsupported version {version}")));
    }
    let kind = input.read_u8()?;
    let dim = input.read_u32::<LittleEndian>()? as usize;
    let fp = input.read_u64::<LittleEndian>()?;
    if fp != fingerprint {
        return Err(FitError::Checkpoint("checkpoint was written for a different dataset".into()));
    }
    let mu = input.read_f64::<LittleEndian>()?;
    let users = read_rows(&mut input, dim)?;
    let items = read_rows(&mut input, dim)?;
    let hyper = Hyper { dim, ..Hyper::default() };
    Ok(match kind {
        0 => Baseline::GlobalMean(GlobalMean { mu }),
        1 => Baseline::UserMean(UserMean { mu, means: users.into_iter().map(|(u, v, _)| (UserId(u), v)).collect() }),
        2 => Baseline::Bias(BiasModel {
            mu,
            user_bias: users.into_iter().map(|(u, v, _)| (UserId(u), v)).collect(),
            item_bias: items.into_iter().map(|(i, v, _)| (ItemId(i), v)).collect(),
            hyper,
        }),
        3 => {
            let mut m = MfModel {
                mu,
                dim,
                user_rows: HashMap::new(),
                item_rows: HashMap::new(),
                user_bias: vec![],
                item_bias: vec![],
                user_factors: vec![],
                item_factors: vec![],
                hyper,
                curve: vec![],
            };
            for (r, (u, b, f)) in users.into_iter().enumerate() {
                m.user_rows.insert(UserId(u), r);
                m.user_bias.push(b);
                m.user_factors.extend(f);
            }
            for (r, (i, b, f)) in items.into_iter().enumerate() {
                m.item_rows.insert(ItemId(i), r);
                m.item_bias.push(b);
                m.item_factors.extend(f);
            }
            Baseline::Mf(m)
        }
        other => return Err(FitError::Checkpoint(format!("unknown model kind {other}"))),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::RawRecord;
    use crate::synth;

    fn tiny(ratings: &[(&str, &str, f64)]) -> Dataset {
        Dataset::from_records(ratings.iter().enumerate().map(|(n, (u, i, r))| RawRecord {
            user: u.to_string(),
            item: i.to_string(),
            rating: *r,
            text: "t".into(),
            timestamp: None,
            review_index: n,
        }))
    }

    #[test]
    fn global_mean_of_five_and_three() {
        let ds = tiny(&[("a", "x", 5.0), ("b", "y", 3.0)]);
        let train = View::full(&ds);
        let m = GlobalMean::fit(&train).unwrap();
        assert_eq!(m.predict(UserId(0), ItemId(1)), 4.0);
        assert_eq!(fit_bias(&train, Hyper::default()).unwrap().mu, 4.0);
    }

    #[test]
    fn single_pair_converges() {
        let ds = tiny(&[("a", "x", 5.0)]);
        let hyper = Hyper { reg: 0.0, ..Hyper::default() };
        let m = fit_bias(&View::full(&ds), hyper).unwrap();
        assert!((m.predict(UserId(0), ItemId(0)) - 5.0).abs() < 1e-3);
    }

    #[test]
    fn cold_user_uses_item_offset() {
        let ds = tiny(&[("a", "x", 5.0), ("b", "x", 4.0), ("a", "y", 1.0), ("c", "y", 2.0)]);
        let train = View::new(&ds, &[0, 1, 2]);
        let m = fit_bias(&train, Hyper { epochs: 50, lr: 0.05, ..Hyper::default() }).unwrap();
        let cold = UserId(2);
        assert_eq!(m.predict(cold, ItemId(0)), (m.mu + m.item_bias[&ItemId(0)]).clamp(1.0, 5.0));
    }

    #[test]
    fn empty_train_is_an_error() {
        let ds = tiny(&[("a", "x", 5.0)]);
        let empty = View::new(&ds, &[]);
        assert!(matches!(fit_bias(&empty, Hyper::default()), Err(FitError::EmptyTrain)));
        assert!(matches!(fit_mf(&empty, Hyper::default()), Err(FitError::EmptyTrain)));
        assert!(matches!(fit_mf(&View::full(&ds), Hyper { dim: 0, ..Hyper::default() }), Err(FitError::ZeroDim)));
    }

    #[test]
    fn mf_unseen_pair_gets_mu() {
        let ds = tiny(&[("a", "x", 5.0), ("b", "y", 2.0), ("c", "z", 3.0)]);
        let m = fit_mf(&View::new(&ds, &[0, 1]), Hyper::default()).unwrap();
        assert_eq!(m.predict(UserId(2), ItemId(2)), m.mu.clamp(1.0, 5.0));
        assert_eq!(m.user_rows.len(), 2);
        assert_eq!(m.item_rows.len(), 2);
    }

    #[test]
    fn mf_zero_epochs_matches_bias_only_error() {
        let ds = synth::uniform_corpus(300, 20, 20, 8);
        let train = View::full(&ds);
        let mf = fit_mf(&train, Hyper { epochs: 0, ..Hyper::default() }).unwrap();
        let mean_only = mean_squared_error(&GlobalMean::fit(&train).unwrap(), &train);
        assert!(mf.curve.is_empty());
        assert!((mf.training_error(&train) - mean_only).abs() < 0.02 * mean_only);
    }

    #[test]
    fn mf_is_deterministic() {
        let ds = synth::uniform_corpus(200, 15, 15, 9);
        let train = View::full(&ds);
        let a = fit_mf(&train, Hyper { seed: 4, ..Hyper::default() }).unwrap();
        let b = fit_mf(&train, Hyper { seed: 4, ..Hyper::default() }).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn predictions_in_range() {
        let ds = tiny(&[("a", "x", 5.0), ("a", "y", 5.0), ("b", "x", 5.0)]);
        let m = fit_mf(&View::full(&ds), Hyper { lr: 0.5, epochs: 200, ..Hyper::default() }).unwrap();
        for u in 0..3 {
            for i in 0..3 {
                let p = m.predict(UserId(u), ItemId(i));
                assert!((1.0..=5.0).contains(&p));
            }
        }
    }

    #[test]
    fn checkpoints_roundtrip() {
        let ds = synth::uniform_corpus(200, 15, 15, 10);
        let train = View::new(&ds, &(0..150).collect::<Vec<_>>());
        let fp = dataset_fingerprint(&ds);
        for kind in [BaselineKind::GlobalMean, BaselineKind::UserMean, BaselineKind::Bias, BaselineKind::Mf] {
            let model = Baseline::fit(kind, &train, Hyper { dim: 4, ..Hyper::default() }).unwrap();
            let mut buf = Vec::new();
            save_checkpoint(&model, fp, &mut buf).unwrap();
            let back = load_checkpoint(&buf[..], fp).unwrap();
            for p in 0..ds.len() {
                let r = ds.review(p);
                assert_eq!(back.predict(r.user, r.item).to_bits(), model.predict(r.user, r.item).to_bits());
            }
            assert!(load_checkpoint(&buf[..], fp ^ 1).is_err());
        }
    }
}
