//! One-sentence user and item profiles distilled from training reviews by a
//! model in two calls: feature extraction, then summarization.
//!
//! Only training-fold reviews with non-empty text are used, at most the first
//! [`MAX_SOURCE_REVIEWS`] of each owner in source order.

use std::collections::HashMap;
use std::io::{Read, Write};

use serde::Serialize;
use thiserror::Error;

use crate::backend::{BackendError, Client, Request};
use crate::corpus::{Dataset, ItemId, UserId, View};
use crate::exec::Exec;

pub const MAX_SOURCE_REVIEWS: usize = 15;
/// Shown in place of a summary for owners with no usable profile.
pub const NO_INFORMATION: &str = "No information available.";
const SUMMARY_ATTEMPTS: usize = 3;

#[derive(Debug, Error)]
pub enum ProfilerError {
    #[error("profiling {owner}: {source}")]
    Backend { owner: String, source: BackendError },
    #[error("profile row {row}: {message}")]
    Row { row: usize, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Owner {
    User(UserId),
    Item(ItemId),
}

impl Owner {
    pub fn kind(&self) -> &'static str {
        match self {
            Owner::User(_) => "user",
            Owner::Item(_) => "item",
        }
    }

    pub fn source_id<'a>(&self, ds: &'a Dataset) -> &'a str {
        match *self {
            Owner::User(u) => ds.user_name(u),
            Owner::Item(i) => ds.item_name(i),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub owner: Owner,
    pub extracted: Option<String>,
    pub summary: Option<String>,
    pub source_positions: Vec<usize>,
    pub cap_applied: bool,
}

impl Profile {
    fn unavailable(owner: Owner, source_positions: Vec<usize>, cap_applied: bool) -> Self {
        Profile { owner, extracted: None, summary: None, source_positions, cap_applied }
    }
}

/// Training reviews of `owner` fed to extraction: `(positions, cap_applied)`.
pub fn extraction_sources(owner: Owner, train: &View<'_>) -> (Vec<usize>, bool) {
    let ds = train.dataset();
    let all = match owner {
        Owner::User(u) => train.user_positions(u),
        Owner::Item(i) => train.item_positions(i),
    };
    let usable: Vec<usize> = all.iter().copied().filter(|&p| !ds.review(p).text.trim().is_empty()).collect();
    let capped = usable.len() > MAX_SOURCE_REVIEWS;
    (usable.into_iter().take(MAX_SOURCE_REVIEWS).collect(), capped)
}

pub fn extraction_prompt(ds: &Dataset, owner: Owner, positions: &[usize]) -> String {
    let mut p = match owner {
        Owner::User(_) => String::from(
            "Below are reviews written by one user, each with the ID of the reviewed item. \
             List the features of this user that influence the ratings they give to items.\n",
        ),
        Owner::Item(_) => String::from(
            "Below are reviews of one item, each with the ID of the reviewing user. \
             List the features of this item that influence the ratings users give to it.\n",
        ),
    };
    for &pos in positions {
        let r = ds.review(pos);
        let counterpart = match owner {
            Owner::User(_) => format!("item {}", ds.item_name(r.item)),
            Owner::Item(_) => format!("user {}", ds.user_name(r.user)),
        };
        p.push_str(&format!("- {counterpart}: {}\n", r.text.split_whitespace().collect::<Vec<_>>().join(" ")));
    }
    p.push_str("Features:");
    p
}

pub fn summary_prompt(owner: Owner, extracted: &str) -> String {
    let what = match owner {
        Owner::User(_) => "the user's preferences",
        Owner::Item(_) => "a description of the item",
    };
    format!("Summarize the following features into one sentence giving {what}.\n{}\nSummary:", extracted.trim())
}

/// Text up to and including the first `.`, `!` or `?` that is followed by
/// whitespace or the end of the text.
pub fn first_sentence(text: &str) -> &str {
    let text = text.trim();
    let bytes = text.as_bytes();
    for (i, b) in bytes.iter().enumerate() {
        if matches!(b, b'.' | b'!' | b'?') && bytes.get(i + 1).is_none_or(|c| c.is_ascii_whitespace()) {
            return &text[..=i];
        }
    }
    text
}

#[derive(Debug, Clone, PartialEq)]
pub enum Extraction {
    Features { text: String, positions: Vec<usize>, cap_applied: bool },
    Unavailable { cap_applied: bool },
}

pub fn extract_features(client: &Client, owner: Owner, train: &View<'_>) -> Result<Extraction, BackendError> {
    let (positions, cap_applied) = extraction_sources(owner, train);
    if positions.is_empty() {
        return Ok(Extraction::Unavailable { cap_applied });
    }
    let prompt = extraction_prompt(train.dataset(), owner, &positions);
    let text = client.complete(&Request { prompt: &prompt, target: None })?.text;
    if text.trim().is_empty() {
        return Ok(Extraction::Unavailable { cap_applied });
    }
    Ok(Extraction::Features { text, positions, cap_applied })
}

/// One-sentence summary of `extracted`, or `None` after repeated empty
/// completions.
pub fn summarize(client: &Client, owner: Owner, extracted: &str) -> Result<Option<String>, BackendError> {
    if extracted.trim().is_empty() {
        return Ok(None);
    }
    let base = summary_prompt(owner, extracted);
    for attempt in 0..SUMMARY_ATTEMPTS {
        // vary the prompt so a cached empty answer is not replayed
        let prompt = if attempt == 0 { base.clone() } else { format!("{base}\n(attempt {})", attempt + 1) };
        let text = client.complete(&Request { prompt: &prompt, target: None })?.text;
        let s = first_sentence(&text);
        if !s.is_empty() {
            return Ok(Some(s.to_owned()));
        }
    }
    Ok(None)
}

pub fn build_profile(client: &Client, owner: Owner, train: &View<'_>) -> Result<Profile, BackendError> {
    match extract_features(client, owner, train)? {
        Extraction::Unavailable { cap_applied } => Ok(Profile::unavailable(owner, Vec::new(), cap_applied)),
        Extraction::Features { text, positions, cap_applied } => {
            let summary = summarize(client, owner, &text)?;
            Ok(Profile { owner, extracted: Some(text), summary, source_positions: positions, cap_applied })
        }
    }
}

/// Profiles keyed by owner, ordered users first then items, each by id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProfileTable {
    profiles: Vec<Profile>,
    users: HashMap<UserId, usize>,
    items: HashMap<ItemId, usize>,
}

impl ProfileTable {
    pub fn from_profiles(mut profiles: Vec<Profile>) -> Self {
        profiles.sort_by_key(|p| p.owner);
        let mut t = ProfileTable { profiles, ..Default::default() };
        for (k, p) in t.profiles.iter().enumerate() {
            match p.owner {
                Owner::User(u) => t.users.insert(u, k),
                Owner::Item(i) => t.items.insert(i, k),
            };
        }
        t
    }

    pub fn profiles(&self) -> &[Profile] {
        &self.profiles
    }

    pub fn user(&self, u: UserId) -> Option<&Profile> {
        self.users.get(&u).map(|&k| &self.profiles[k])
    }

    pub fn item(&self, i: ItemId) -> Option<&Profile> {
        self.items.get(&i).map(|&k| &self.profiles[k])
    }

    pub fn user_summary(&self, u: UserId) -> &str {
        self.user(u).and_then(|p| p.summary.as_deref()).unwrap_or(NO_INFORMATION)
    }

    pub fn item_summary(&self, i: ItemId) -> &str {
        self.item(i).and_then(|p| p.summary.as_deref()).unwrap_or(NO_INFORMATION)
    }

    /// Source positions outside the given fold; empty when leakage-free.
    pub fn positions_outside(&self, train: &View<'_>) -> Vec<usize> {
        self.profiles.iter().flat_map(|p| &p.source_positions).copied().filter(|&p| !train.contains(p)).collect()
    }

    /// CSV: `owner_kind,owner_source_id,summary,n_source_reviews,cap_applied`.
    /// An empty summary marks an unavailable profile.
    pub fn write_csv<W: Write>(&self, ds: &Dataset, out: W) -> Result<(), ProfilerError> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(["owner_kind", "owner_source_id", "summary", "n_source_reviews", "cap_applied"])?;
        for p in &self.profiles {
            w.write_record([
                p.owner.kind(),
                p.owner.source_id(ds),
                p.summary.as_deref().unwrap_or(""),
                &p.source_positions.len().to_string(),
                if p.cap_applied { "true" } else { "false" },
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// Loads summaries written by [`ProfileTable::write_csv`]. Source
    /// positions are not part of the file and come back empty; rows for
    /// owners unknown to `ds` are skipped.
    pub fn read_csv<R: Read>(ds: &Dataset, input: R) -> Result<Self, ProfilerError> {
        let mut rdr = csv::Reader::from_reader(input);
        let mut profiles = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let bad = |message: &str| ProfilerError::Row { row, message: message.to_owned() };
            let id = rec.get(1).ok_or_else(|| bad("missing owner_source_id"))?;
            let owner = match rec.get(0) {
                Some("user") => ds.user_id(id).map(Owner::User),
                Some("item") => ds.item_id(id).map(Owner::Item),
                _ => return Err(bad("owner_kind must be user or item")),
            };
            let Some(owner) = owner else { continue };
            let summary = rec.get(2).filter(|s| !s.is_empty()).map(str::to_owned);
            let cap_applied = rec.get(4) == Some("true");
            profiles.push(Profile { owner, extracted: None, summary, source_positions: Vec::new(), cap_applied });
        }
        Ok(Self::from_profiles(profiles))
    }
}

/// Profiles every user and item present in the training fold. Owners are
/// processed under `exec` (bounded by the client's in-flight limit when
/// called from the runner) and assembled in owner order.
pub fn build_profiles(client: &Client, train: &View<'_>, exec: Exec) -> Result<ProfileTable, ProfilerError> {
    let ds = train.dataset();
    let owners: Vec<Owner> = train.users().map(Owner::User).chain(train.items().map(Owner::Item)).collect();
    let built = exec.map(&owners, |&o| {
        build_profile(client, o, train).map_err(|source| ProfilerError::Backend {
            owner: format!("{} {}", o.kind(), o.source_id(ds)),
            source,
        })
    });
    Ok(ProfileTable::from_profiles(built.into_iter().collect::<Result<_, _>>()?))
}
