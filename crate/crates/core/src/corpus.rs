//! Review records, the indexed in-memory dataset, and ingestion from the
//! Amazon 2014 JSON-lines dump or the generic CSV schema.

use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use flate2::read::MultiGzDecoder;
use indexmap::IndexSet;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Exec;

/// Header of the generic CSV schema, also used for canonical export.
pub const CSV_HEADER: [&str; 5] = ["user", "item", "rating", "text", "timestamp"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UserId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ItemId(pub u32);

impl UserId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl ItemId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("record {record}: {message}")]
    Malformed { record: usize, message: String },
    #[error("unknown user `{0}`")]
    UnknownUser(String),
    #[error("unknown item `{0}`")]
    UnknownItem(String),
    #[error("unknown input format `{0}` (expected amazon-2014-jsonlines or generic-csv)")]
    UnknownFormat(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// One interaction: a user's rating and review text for an item.
#[derive(Debug, Clone, PartialEq)]
pub struct Review {
    pub user: UserId,
    pub item: ItemId,
    pub rating: f64,
    /// Non-empty after ingestion; perturbations may blank it.
    pub text: String,
    pub timestamp: Option<i64>,
    /// Ordinal of the record within its source file.
    pub review_index: usize,
}

/// Interning table between source string ids and dense integer ids,
/// assigned in first-appearance order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdTable {
    ids: IndexSet<String>,
}

impl IdTable {
    fn intern(&mut self, id: &str) -> u32 {
        if let Some(idx) = self.ids.get_index_of(id) {
            return idx as u32;
        }
        self.ids.insert_full(id.to_owned()).0 as u32
    }

    pub fn get(&self, id: &str) -> Option<u32> {
        self.ids.get_index_of(id).map(|i| i as u32)
    }

    pub fn name(&self, id: u32) -> &str {
        &self.ids[id as usize]
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.ids.iter().map(String::as_str)
    }
}

/// A record before interning.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub user: String,
    pub item: String,
    pub rating: f64,
    pub text: String,
    pub timestamp: Option<i64>,
    pub review_index: usize,
}

/// Indexed review collection. `user_index[u]` is the user's history
/// and `item_index[i]` the item's history, both as positions into
/// `reviews` in source order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    reviews: Vec<Review>,
    user_index: Vec<Vec<usize>>,
    item_index: Vec<Vec<usize>>,
    users: IdTable,
    items: IdTable,
}

impl Dataset {
    pub fn from_records<I: IntoIterator<Item = RawRecord>>(records: I) -> Self {
        let mut ds = Dataset::default();
        for rec in records {
            let user = UserId(ds.users.intern(&rec.user));
            let item = ItemId(ds.items.intern(&rec.item));
            let pos = ds.reviews.len();
            if user.index() == ds.user_index.len() {
                ds.user_index.push(Vec::new());
            }
            if item.index() == ds.item_index.len() {
                ds.item_index.push(Vec::new());
            }
            ds.user_index[user.index()].push(pos);
            ds.item_index[item.index()].push(pos);
            ds.reviews.push(Review {
                user,
                item,
                rating: rec.rating,
                text: rec.text,
                timestamp: rec.timestamp,
                review_index: rec.review_index,
            });
        }
        ds
    }

    /// Sub-dataset of the given positions (in ascending order), with ids
    /// re-interned in first-appearance order and `review_index` kept.
    pub fn subset<I: IntoIterator<Item = usize>>(&self, positions: I) -> Dataset {
        let mut positions: Vec<usize> = positions.into_iter().collect();
        positions.sort_unstable();
        positions.dedup();
        Dataset::from_records(positions.into_iter().map(|p| self.raw_record(p)))
    }

    pub fn raw_record(&self, pos: usize) -> RawRecord {
        let r = &self.reviews[pos];
        RawRecord {
            user: self.users.name(r.user.0).to_owned(),
            item: self.items.name(r.item.0).to_owned(),
            rating: r.rating,
            text: r.text.clone(),
            timestamp: r.timestamp,
            review_index: r.review_index,
        }
    }

    /// Drops reviews whose text is empty after trimming.
    pub fn retain_nonempty(&self) -> Dataset {
        self.subset((0..self.len()).filter(|&p| !self.reviews[p].text.trim().is_empty()))
    }

    pub fn reviews(&self) -> &[Review] {
        &self.reviews
    }

    pub fn review(&self, pos: usize) -> &Review {
        &self.reviews[pos]
    }

    pub fn len(&self) -> usize {
        self.reviews.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reviews.is_empty()
    }

    pub fn user_count(&self) -> usize {
        self.users.len()
    }

    pub fn item_count(&self) -> usize {
        self.items.len()
    }

    pub fn users(&self) -> &IdTable {
        &self.users
    }

    pub fn items(&self) -> &IdTable {
        &self.items
    }

    pub fn user_name(&self, u: UserId) -> &str {
        self.users.name(u.0)
    }

    pub fn item_name(&self, i: ItemId) -> &str {
        self.items.name(i.0)
    }

    pub fn user_id(&self, source: &str) -> Option<UserId> {
        self.users.get(source).map(UserId)
    }

    pub fn item_id(&self, source: &str) -> Option<ItemId> {
        self.items.get(source).map(ItemId)
    }

    pub fn user_positions(&self, u: UserId) -> &[usize] {
        self.user_index.get(u.index()).map_or(&[], Vec::as_slice)
    }

    pub fn item_positions(&self, i: ItemId) -> &[usize] {
        self.item_index.get(i.index()).map_or(&[], Vec::as_slice)
    }

    /// Replaces review texts in place; used by perturbations, which never
    /// touch ids or ratings.
    pub(crate) fn set_text(&mut self, pos: usize, text: String) {
        self.reviews[pos].text = text;
    }

    /// Position of each `review_index`, for resolving manifests.
    pub fn position_of_review_index(&self) -> std::collections::HashMap<usize, usize> {
        self.reviews.iter().enumerate().map(|(p, r)| (r.review_index, p)).collect()
    }

    /// Canonical export in the generic CSV schema (UTF-8, LF line endings).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), CorpusError> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(CSV_HEADER)?;
        for r in &self.reviews {
            let ts = r.timestamp.map(|t| t.to_string()).unwrap_or_default();
            w.write_record([
                self.users.name(r.user.0),
                self.items.name(r.item.0),
                &r.rating.to_string(),
                &r.text,
                &ts,
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Reviews of `user` in source order.
pub fn user_history<'a>(dataset: &'a Dataset, user: &str) -> Result<Vec<&'a Review>, CorpusError> {
    let u = dataset.user_id(user).ok_or_else(|| CorpusError::UnknownUser(user.to_owned()))?;
    Ok(dataset.user_positions(u).iter().map(|&p| dataset.review(p)).collect())
}

/// Reviews of `item` in source order.
pub fn item_history<'a>(dataset: &'a Dataset, item: &str) -> Result<Vec<&'a Review>, CorpusError> {
    let i = dataset.item_id(item).ok_or_else(|| CorpusError::UnknownItem(item.to_owned()))?;
    Ok(dataset.item_positions(i).iter().map(|&p| dataset.review(p)).collect())
}

/// A fold of a parent dataset: sorted positions plus per-user and per-item
/// position lists restricted to the fold.
#[derive(Debug, Clone)]
pub struct View<'a> {
    dataset: &'a Dataset,
    positions: Vec<usize>,
    member: Vec<bool>,
    by_user: Vec<Vec<usize>>,
    by_item: Vec<Vec<usize>>,
}

impl<'a> View<'a> {
    pub fn new(dataset: &'a Dataset, positions: &[usize]) -> Self {
        let mut positions = positions.to_vec();
        positions.sort_unstable();
        positions.dedup();
        let mut member = vec![false; dataset.len()];
        let mut by_user = vec![Vec::new(); dataset.user_count()];
        let mut by_item = vec![Vec::new(); dataset.item_count()];
        for &p in &positions {
            member[p] = true;
            let r = dataset.review(p);
            by_user[r.user.index()].push(p);
            by_item[r.item.index()].push(p);
        }
        View { dataset, positions, member, by_user, by_item }
    }

    pub fn full(dataset: &'a Dataset) -> Self {
        let all: Vec<usize> = (0..dataset.len()).collect();
        Self::new(dataset, &all)
    }

    pub fn dataset(&self) -> &'a Dataset {
        self.dataset
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn contains(&self, pos: usize) -> bool {
        self.member.get(pos).copied().unwrap_or(false)
    }

    pub fn user_positions(&self, u: UserId) -> &[usize] {
        self.by_user.get(u.index()).map_or(&[], Vec::as_slice)
    }

    pub fn item_positions(&self, i: ItemId) -> &[usize] {
        self.by_item.get(i.index()).map_or(&[], Vec::as_slice)
    }

    pub fn reviews(&self) -> impl Iterator<Item = &'a Review> + '_ {
        self.positions.iter().map(|&p| self.dataset.review(p))
    }

    /// Users with at least one review in the fold, ascending by id.
    pub fn users(&self) -> impl Iterator<Item = UserId> + '_ {
        (0..self.by_user.len()).filter(|&u| !self.by_user[u].is_empty()).map(|u| UserId(u as u32))
    }

    pub fn items(&self) -> impl Iterator<Item = ItemId> + '_ {
        (0..self.by_item.len()).filter(|&i| !self.by_item[i].is_empty()).map(|i| ItemId(i as u32))
    }

    /// Mean rating over the fold, summed in source order.
    pub fn mean_rating(&self) -> Option<f64> {
        mean_of(self.positions.iter().map(|&p| self.dataset.review(p).rating))
    }

    pub fn user_mean(&self, u: UserId) -> Option<f64> {
        mean_of(self.user_positions(u).iter().map(|&p| self.dataset.review(p).rating))
    }
}

fn mean_of<I: Iterator<Item = f64>>(values: I) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Format {
    #[serde(rename = "amazon-2014-jsonlines")]
    AmazonJsonLines,
    #[serde(rename = "generic-csv")]
    GenericCsv,
}

impl FromStr for Format {
    type Err = CorpusError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "amazon-2014-jsonlines" | "amazon" | "jsonl" => Ok(Format::AmazonJsonLines),
            "generic-csv" | "csv" => Ok(Format::GenericCsv),
            other => Err(CorpusError::UnknownFormat(other.to_owned())),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::AmazonJsonLines => "amazon-2014-jsonlines",
            Format::GenericCsv => "generic-csv",
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IngestOptions {
    /// Abort on the first malformed record instead of collecting it.
    pub strict: bool,
    /// Drop records whose trimmed text is empty.
    pub drop_empty: bool,
    pub exec: Exec,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions { strict: false, drop_empty: true, exec: Exec::Parallel }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordError {
    pub record: usize,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct IngestReport {
    pub dataset: Dataset,
    pub dropped_empty: usize,
    pub rejected_rating: usize,
    pub errors: Vec<RecordError>,
}

enum Parsed {
    Keep(RawRecord),
    Empty,
    BadRating(f64),
    Malformed(String),
}

#[derive(Deserialize)]
struct AmazonRecord {
    #[serde(rename = "reviewerID")]
    reviewer_id: Option<String>,
    asin: Option<String>,
    overall: Option<f64>,
    #[serde(rename = "reviewText")]
    review_text: Option<String>,
    #[serde(rename = "unixReviewTime")]
    unix_review_time: Option<i64>,
}

fn classify(user: String, item: String, rating: f64, text: String, timestamp: Option<i64>, idx: usize, drop_empty: bool) -> Parsed {
    if !(1.0..=5.0).contains(&rating) {
        return Parsed::BadRating(rating);
    }
    if drop_empty && text.trim().is_empty() {
        return Parsed::Empty;
    }
    Parsed::Keep(RawRecord { user, item, rating, text, timestamp, review_index: idx })
}

fn parse_amazon_line(line: &str, idx: usize, drop_empty: bool) -> Parsed {
    let rec: AmazonRecord = match serde_json::from_str(line) {
        Ok(r) => r,
        Err(e) => return Parsed::Malformed(e.to_string()),
    };
    let (Some(user), Some(item), Some(rating)) = (rec.reviewer_id, rec.asin, rec.overall) else {
        return Parsed::Malformed("missing reviewerID, asin or overall".into());
    };
    classify(user, item, rating, rec.review_text.unwrap_or_default(), rec.unix_review_time, idx, drop_empty)
}

fn parse_csv_row(row: &csv::StringRecord, idx: usize, drop_empty: bool) -> Parsed {
    let field = |i: usize| row.get(i).unwrap_or("");
    let (user, item) = (field(0), field(1));
    if user.is_empty() || item.is_empty() {
        return Parsed::Malformed("missing user or item".into());
    }
    let rating: f64 = match field(2).trim().parse() {
        Ok(r) => r,
        Err(_) => return Parsed::Malformed(format!("bad rating `{}`", field(2))),
    };
    let timestamp = match field(4).trim() {
        "" => None,
        t => match t.parse() {
            Ok(t) => Some(t),
            Err(_) => return Parsed::Malformed(format!("bad timestamp `{t}`")),
        },
    };
    classify(user.to_owned(), item.to_owned(), rating, field(3).to_owned(), timestamp, idx, drop_empty)
}

fn open(path: &Path) -> Result<Box<dyn Read>, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io { path: path.to_owned(), source })?;
    if path.extension().is_some_and(|e| e == "gz") {
        Ok(Box::new(MultiGzDecoder::new(file)))
    } else {
        Ok(Box::new(file))
    }
}

/// Reads a review dump into a [`Dataset`]. Files ending in `.gz` are
/// decompressed transparently.
pub fn ingest(path: &Path, format: Format, opts: IngestOptions) -> Result<IngestReport, CorpusError> {
    let reader = open(path)?;
    ingest_reader(reader, format, opts).map_err(|e| match e {
        CorpusError::Io { source, .. } => CorpusError::Io { path: path.to_owned(), source },
        other => other,
    })
}

pub fn ingest_reader<R: Read>(reader: R, format: Format, opts: IngestOptions) -> Result<IngestReport, CorpusError> {
    let io_err = |source| CorpusError::Io { path: PathBuf::new(), source };
    let parsed: Vec<Parsed> = match format {
        Format::AmazonJsonLines => {
            let mut lines = Vec::new();
            for line in BufReader::new(reader).lines() {
                let line = line.map_err(io_err)?;
                if !line.trim().is_empty() {
                    lines.push(line);
                }
            }
            let indexed: Vec<(usize, String)> = lines.into_iter().enumerate().collect();
            opts.exec.map(&indexed, |(i, l)| parse_amazon_line(l, *i, opts.drop_empty))
        }
        Format::GenericCsv => {
            let mut rows = Vec::new();
            let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
            for (i, row) in rdr.records().enumerate() {
                match row {
                    Ok(r) => rows.push((i, Some(r))),
                    Err(e) if e.is_io_error() => return Err(e.into()),
                    Err(_) => rows.push((i, None)),
                }
            }
            opts.exec.map(&rows, |(i, r)| match r {
                Some(r) => parse_csv_row(r, *i, opts.drop_empty),
                None => Parsed::Malformed("unparseable CSV row".into()),
            })
        }
    };

    let mut records = Vec::with_capacity(parsed.len());
    let (mut dropped_empty, mut rejected_rating) = (0, 0);
    let mut errors = Vec::new();
    for (record, p) in parsed.into_iter().enumerate() {
        match p {
            Parsed::Keep(r) => records.push(r),
            Parsed::Empty => dropped_empty += 1,
            Parsed::BadRating(r) => {
                rejected_rating += 1;
                if opts.strict {
                    return Err(CorpusError::Malformed { record, message: format!("rating {r} outside [1,5]") });
                }
            }
            Parsed::Malformed(message) => {
                if opts.strict {
                    return Err(CorpusError::Malformed { record, message });
                }
                errors.push(RecordError { record, message });
            }
        }
    }
    Ok(IngestReport { dataset: Dataset::from_records(records), dropped_empty, rejected_rating, errors })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv_ingest(body: &str) -> IngestReport {
        ingest_reader(body.as_bytes(), Format::GenericCsv, IngestOptions::default()).unwrap()
    }

    const THREE: &str = "user,item,rating,text,timestamp\nA,X,5,great,10\nB,X,3,ok,11\nA,Y,4,fine,\n";

    #[test]
    fn empty_input() {
        let rep = csv_ingest("");
        assert_eq!((rep.dataset.len(), rep.dataset.user_count(), rep.dataset.item_count()), (0, 0, 0));
        let rep = ingest_reader(&b""[..], Format::AmazonJsonLines, IngestOptions::default()).unwrap();
        assert!(rep.dataset.is_empty());
    }

    #[test]
    fn three_records() {
        let ds = csv_ingest(THREE).dataset;
        assert_eq!((ds.len(), ds.user_count(), ds.item_count()), (3, 2, 2));
        assert_eq!(ds.user_id("A"), Some(UserId(0)));
        assert_eq!(ds.item_id("Y"), Some(ItemId(1)));
        assert_eq!(ds.review(2).timestamp, None);
        let total: usize = ["A", "B"].iter().map(|u| user_history(&ds, u).unwrap().len()).sum();
        assert_eq!(total, 3);
        let total: usize = ["X", "Y"].iter().map(|i| item_history(&ds, i).unwrap().len()).sum();
        assert_eq!(total, 3);
    }

    #[test]
    fn empty_text_dropped() {
        let rep = csv_ingest("user,item,rating,text,timestamp\nA,X,5,,\nB,X,3,ok,\n");
        assert_eq!(rep.dataset.len(), 1);
        assert_eq!(rep.dropped_empty, 1);
        let rep = csv_ingest("user,item,rating,text,timestamp\nA,X,5,\"  \t\",\n");
        assert_eq!(rep.dropped_empty, 1);
    }

    #[test]
    fn amazon_fields() {
        let body = r#"{"reviewerID":"U1","asin":"I1","overall":5.0,"reviewText":"Nice strings","unixReviewTime":1400000000,"helpful":[0,0]}
{"reviewerID":"U2","asin":"I1","overall":2.0,"reviewText":""}
{"reviewerID":"U2","asin":"I2","overall":4.0}
not json
{"reviewerID":"U3","asin":"I3","overall":7.0,"reviewText":"x"}
"#;
        let rep = ingest_reader(body.as_bytes(), Format::AmazonJsonLines, IngestOptions::default()).unwrap();
        assert_eq!(rep.dataset.len(), 1);
        assert_eq!(rep.dropped_empty, 2);
        assert_eq!(rep.rejected_rating, 1);
        assert_eq!(rep.errors.len(), 1);
        assert_eq!(rep.errors[0].record, 3);
        let r = rep.dataset.review(0);
        assert_eq!(r.timestamp, Some(1400000000));
        assert_eq!(r.text, "Nice strings");
    }

    #[test]
    fn strict_mode_aborts() {
        let opts = IngestOptions { strict: true, ..Default::default() };
        let err = ingest_reader("user,item,rating,text,timestamp\nA,X,abc,t,\n".as_bytes(), Format::GenericCsv, opts);
        assert!(matches!(err, Err(CorpusError::Malformed { record: 0, .. })));
    }

    #[test]
    fn history_source_order() {
        let body = "user,item,rating,text,timestamp\nB,X,1,a,\nB,Y,1,b,\nA,Z,2,c,\nB,Z,1,d,\nA,W,2,e,\nA,X,3,f,\n";
        let ds = csv_ingest(body).dataset;
        let hist: Vec<usize> = user_history(&ds, "A").unwrap().iter().map(|r| r.review_index).collect();
        assert_eq!(hist, vec![2, 4, 5]);
        assert!(matches!(user_history(&ds, "nobody"), Err(CorpusError::UnknownUser(_))));
        assert!(matches!(item_history(&ds, "nothing"), Err(CorpusError::UnknownItem(_))));
    }

    #[test]
    fn duplicates_kept_and_fractional_ratings() {
        let ds = csv_ingest("user,item,rating,text,timestamp\nA,X,4.5,a,\nA,X,2,b,\n").dataset;
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.review(0).rating, 4.5);
    }

    #[test]
    fn export_uses_lf_and_roundtrips() {
        let ds = csv_ingest("user,item,rating,text,timestamp\nA,X,5,\"multi\nline, \"\"quoted\"\"\",3\nB,X,1,b,\n").dataset;
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        assert!(!buf.contains(&b'\r'));
        let back = ingest_reader(&buf[..], Format::GenericCsv, IngestOptions::default()).unwrap().dataset;
        assert_eq!(back, ds);
    }

    #[test]
    fn view_indexes() {
        let ds = csv_ingest(THREE).dataset;
        let v = View::new(&ds, &[2, 0]);
        assert_eq!(v.positions(), &[0, 2]);
        assert_eq!(v.user_positions(UserId(0)), &[0, 2]);
        assert!(v.user_positions(UserId(1)).is_empty());
        assert_eq!(v.mean_rating(), Some(4.5));
        assert!(v.contains(2) && !v.contains(1));
        assert_eq!(v.users().collect::<Vec<_>>(), vec![UserId(0)]);
    }
}
