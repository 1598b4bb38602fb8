//! Prompt rendering for the three prompt families: zero-shot, few-shot with
//! sampled demonstrations, and the profile-plus-ratings input consumed by the
//! fine-tuned regression model.
//!
//! Histories are always drawn from the training fold. Within a history the
//! most recent reviews are kept (timestamp when present, then source order)
//! and listed oldest first. Reviews whose text was removed are listed with
//! their rating only. Review text is budgeted by a [`TokenEstimator`]; when
//! the budget is exceeded, whole reviews are dropped from the tail (oldest
//! end) of whichever section currently lists the most reviews, preferring
//! the later section on ties.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Dataset, ItemId, UserId, View};
use crate::profiler::ProfileTable;
use crate::rng::SplitMix64;

/// Bumped whenever the wording of any template below changes.
pub const TEMPLATE_VERSION: &str = "v1";

const INSTRUCTION: &str =
    "You are a recommender system. Predict the rating (1 to 5) that the user will give to the item, using the reviews below.";
const NO_REVIEWS: &str = "(no reviews)";
const NO_RATINGS: &str = "(no ratings)";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("invalid budget policy: {0}")]
    Policy(String),
    #[error("prompt record line {line}: {source}")]
    Record { line: usize, source: serde_json::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub trait TokenEstimator: Send + Sync {
    fn estimate(&self, text: &str) -> usize;
}

/// `ceil(byte_length / 4)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ByteHeuristic;

impl TokenEstimator for ByteHeuristic {
    fn estimate(&self, text: &str) -> usize {
        text.len().div_ceil(4)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BudgetPolicy {
    pub max_review_tokens: usize,
    /// (user, item)
    pub zero_shot_reviews: (usize, usize),
    pub few_shot_target_reviews: (usize, usize),
    pub shots: usize,
    pub per_shot_reviews: (usize, usize),
    pub max_history_ratings: (usize, usize),
}

impl Default for BudgetPolicy {
    fn default() -> Self {
        BudgetPolicy {
            max_review_tokens: 7680,
            zero_shot_reviews: (10, 10),
            few_shot_target_reviews: (6, 6),
            shots: 3,
            per_shot_reviews: (2, 2),
            max_history_ratings: (32, 32),
        }
    }
}

impl BudgetPolicy {
    pub fn validate(&self) -> Result<(), PromptError> {
        if self.max_review_tokens == 0 {
            return Err(PromptError::Policy("max_review_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    ZeroShot,
    FewShot,
    Profiled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    TargetUser,
    TargetItem,
    Demo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Included {
    pub position: usize,
    pub role: Role,
}

/// The interaction being predicted. `position` is its own (held-out) review,
/// which must never be shown.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Target {
    pub user: UserId,
    pub item: ItemId,
    pub position: Option<usize>,
}

impl Target {
    pub fn of(dataset: &Dataset, position: usize) -> Self {
        let r = dataset.review(position);
        Target { user: r.user, item: r.item, position: Some(position) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedPrompt {
    pub target: (UserId, ItemId),
    pub target_position: Option<usize>,
    pub family: Family,
    pub text: String,
    pub included: Vec<Included>,
    /// Estimated tokens of the review text actually included.
    pub token_estimate: usize,
    pub truncated: bool,
    /// Demonstrations requested but unavailable.
    pub shortfall: usize,
}

impl RenderedPrompt {
    /// A prompt with no provenance, for feeding arbitrary text to a client.
    pub fn plain(target: (UserId, ItemId), text: &str) -> Self {
        RenderedPrompt {
            target,
            target_position: None,
            family: Family::ZeroShot,
            text: text.to_owned(),
            included: Vec::new(),
            token_estimate: 0,
            truncated: false,
            shortfall: 0,
        }
    }
}

struct Entry {
    position: usize,
    role: Role,
    line: String,
    tokens: usize,
}

struct Section {
    header: String,
    entries: Vec<Entry>,
}

/// Up to `cap` most recent positions, oldest first.
fn most_recent(dataset: &Dataset, positions: &[usize], cap: usize, skip: impl Fn(usize) -> bool) -> Vec<usize> {
    let mut picked: Vec<usize> = positions.iter().copied().filter(|&p| !skip(p)).collect();
    let key = |p: usize| (dataset.review(p).timestamp.unwrap_or(i64::MIN), p);
    picked.sort_unstable_by_key(|&p| std::cmp::Reverse(key(p)));
    picked.truncate(cap);
    picked.reverse();
    picked
}

fn entry(dataset: &Dataset, position: usize, role: Role, est: &dyn TokenEstimator) -> Entry {
    let r = dataset.review(position);
    let counterpart = match role {
        Role::TargetItem => format!("user {}", dataset.user_name(r.user)),
        _ => format!("item {}", dataset.item_name(r.item)),
    };
    let text = r.text.trim();
    let (line, tokens) = if text.is_empty() {
        (format!("- {counterpart}, rating {}", r.rating), 0)
    } else {
        (format!("- {counterpart}, rating {}: {}", r.rating, one_line(text)), est.estimate(&r.text))
    };
    Entry { position, role, line, tokens }
}

fn item_entry(dataset: &Dataset, position: usize, role: Role, est: &dyn TokenEstimator) -> Entry {
    let mut e = entry(dataset, position, Role::TargetItem, est);
    e.role = role;
    e
}

fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Drops entries until the review tokens fit; returns (tokens, truncated).
fn fit_budget(sections: &mut [Section], budget: usize) -> (usize, bool) {
    let mut total: usize = sections.iter().flat_map(|s| &s.entries).map(|e| e.tokens).sum();
    let mut truncated = false;
    while total > budget {
        let Some(idx) = (0..sections.len()).filter(|&i| !sections[i].entries.is_empty()).max_by_key(|&i| sections[i].entries.len())
        else {
            break;
        };
        // oldest entry sits first
        let dropped = sections[idx].entries.remove(0);
        total -= dropped.tokens;
        truncated = true;
    }
    (total, truncated)
}

fn push_section(out: &mut String, s: &Section) {
    out.push_str(&s.header);
    out.push('\n');
    if s.entries.is_empty() {
        out.push_str(NO_REVIEWS);
        out.push('\n');
    }
    for e in &s.entries {
        out.push_str(&e.line);
        out.push('\n');
    }
}

fn target_sections(target: Target, train: &View<'_>, caps: (usize, usize), est: &dyn TokenEstimator) -> [Section; 2] {
    let ds = train.dataset();
    let own = |p: usize| Some(p) == target.position;
    let user = most_recent(ds, train.user_positions(target.user), caps.0, own);
    let item = most_recent(ds, train.item_positions(target.item), caps.1, own);
    [
        Section {
            header: "Reviews written by the user:".into(),
            entries: user.into_iter().map(|p| entry(ds, p, Role::TargetUser, est)).collect(),
        },
        Section {
            header: "Reviews of the item:".into(),
            entries: item.into_iter().map(|p| item_entry(ds, p, Role::TargetItem, est)).collect(),
        },
    ]
}

fn query(ds: &Dataset, target: Target) -> String {
    format!(
        "Question: What rating (1 to 5) will user {} give to item {}? Answer with a single number.\nRating:",
        ds.user_name(target.user),
        ds.item_name(target.item)
    )
}

fn ids_block(ds: &Dataset, user: UserId, item: ItemId) -> String {
    format!("User ID: {}\nItem ID: {}\n", ds.user_name(user), ds.item_name(item))
}

fn collect_included(sections: &[Section]) -> Vec<Included> {
    sections.iter().flat_map(|s| &s.entries).map(|e| Included { position: e.position, role: e.role }).collect()
}

pub fn build_zero_shot(target: Target, train: &View<'_>, policy: &BudgetPolicy, est: &dyn TokenEstimator) -> RenderedPrompt {
    let ds = train.dataset();
    let mut sections = target_sections(target, train, policy.zero_shot_reviews, est);
    let (token_estimate, truncated) = fit_budget(&mut sections, policy.max_review_tokens);

    let mut text = format!("{INSTRUCTION}\n\n");
    text.push_str(&ids_block(ds, target.user, target.item));
    for s in &sections {
        push_section(&mut text, s);
    }
    text.push_str(&query(ds, target));
    RenderedPrompt {
        target: (target.user, target.item),
        target_position: target.position,
        family: Family::ZeroShot,
        text,
        included: collect_included(&sections),
        token_estimate,
        truncated,
        shortfall: 0,
    }
}

/// Training positions usable as demonstrations for `target`.
pub fn eligible_demonstrations(target: Target, train: &View<'_>) -> Vec<usize> {
    let ds = train.dataset();
    train
        .positions()
        .iter()
        .copied()
        .filter(|&p| {
            let r = ds.review(p);
            r.user != target.user && r.item != target.item && Some(p) != target.position
        })
        .collect()
}

/// Few-shot prompt. Demonstrations are drawn with `gen` from training
/// interactions involving neither the target user nor the target item, and
/// their review listings also leave out anything touching the target pair.
pub fn build_few_shot(
    gen: &mut SplitMix64,
    target: Target,
    train: &View<'_>,
    policy: &BudgetPolicy,
    est: &dyn TokenEstimator,
) -> RenderedPrompt {
    let ds = train.dataset();
    let mut pool = eligible_demonstrations(target, train);
    let demos = gen.select(&mut pool, policy.shots).to_vec();
    let shortfall = policy.shots - demos.len();

    let mut sections = Vec::with_capacity(2 * demos.len() + 2);
    for &d in &demos {
        let dr = ds.review(d);
        let skip = |p: usize| {
            let r = ds.review(p);
            p == d || r.user == target.user || r.item == target.item
        };
        let user = most_recent(ds, train.user_positions(dr.user), policy.per_shot_reviews.0, skip);
        let item = most_recent(ds, train.item_positions(dr.item), policy.per_shot_reviews.1, skip);
        sections.push(Section {
            header: "Reviews written by the user:".into(),
            entries: user.into_iter().map(|p| entry(ds, p, Role::Demo, est)).collect(),
        });
        sections.push(Section {
            header: "Reviews of the item:".into(),
            entries: item.into_iter().map(|p| item_entry(ds, p, Role::Demo, est)).collect(),
        });
    }
    sections.extend(target_sections(target, train, policy.few_shot_target_reviews, est));
    let (token_estimate, truncated) = fit_budget(&mut sections, policy.max_review_tokens);

    let mut text = format!("{INSTRUCTION}\n\n");
    for (k, &d) in demos.iter().enumerate() {
        let dr = ds.review(d);
        text.push_str(&format!("Example {}:\n", k + 1));
        text.push_str(&ids_block(ds, dr.user, dr.item));
        push_section(&mut text, &sections[2 * k]);
        push_section(&mut text, &sections[2 * k + 1]);
        text.push_str(&format!("Rating: {}\n\n", dr.rating));
    }
    text.push_str("Now the target:\n");
    text.push_str(&ids_block(ds, target.user, target.item));
    let n = sections.len();
    push_section(&mut text, &sections[n - 2]);
    push_section(&mut text, &sections[n - 1]);
    text.push_str(&query(ds, target));

    let mut included = vec![];
    // demonstration interactions show their true rating
    included.extend(demos.iter().map(|&p| Included { position: p, role: Role::Demo }));
    included.extend(collect_included(&sections));
    RenderedPrompt {
        target: (target.user, target.item),
        target_position: target.position,
        family: Family::FewShot,
        text,
        included,
        token_estimate,
        truncated,
        shortfall,
    }
}

fn rating_list(ds: &Dataset, positions: &[usize]) -> String {
    if positions.is_empty() {
        return NO_RATINGS.into();
    }
    positions.iter().map(|&p| ds.review(p).rating.to_string()).collect::<Vec<_>>().join(", ")
}

/// Profile summaries followed by the most recent training ratings of the
/// user and the item. With `rating_only` the summaries are left out.
pub fn build_profiled_input(
    target: Target,
    profiles: &ProfileTable,
    train: &View<'_>,
    policy: &BudgetPolicy,
    rating_only: bool,
) -> RenderedPrompt {
    let ds = train.dataset();
    let own = |p: usize| Some(p) == target.position;
    let user = most_recent(ds, train.user_positions(target.user), policy.max_history_ratings.0, own);
    let item = most_recent(ds, train.item_positions(target.item), policy.max_history_ratings.1, own);

    let mut text = String::new();
    text.push_str(&ids_block(ds, target.user, target.item));
    if !rating_only {
        text.push_str(&format!("User preference: {}\n", profiles.user_summary(target.user)));
        text.push_str(&format!("Item description: {}\n", profiles.item_summary(target.item)));
    }
    text.push_str(&format!("User ratings: {}\n", rating_list(ds, &user)));
    text.push_str(&format!("Item ratings: {}\n", rating_list(ds, &item)));
    text.push_str("Predicted rating:");

    let included = user
        .iter()
        .map(|&p| Included { position: p, role: Role::TargetUser })
        .chain(item.iter().map(|&p| Included { position: p, role: Role::TargetItem }))
        .collect();
    RenderedPrompt {
        target: (target.user, target.item),
        target_position: target.position,
        family: Family::Profiled,
        text,
        included,
        token_estimate: 0,
        truncated: false,
        shortfall: 0,
    }
}

/// One exported prompt, as consumed by the fine-tuning component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub family: Family,
    pub template_version: String,
    pub fold: Option<String>,
    pub user: String,
    pub item: String,
    pub review_index: Option<usize>,
    /// Ground-truth rating of the target interaction, when known.
    pub rating: Option<f64>,
    pub prompt: String,
    pub included: Vec<IncludedRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncludedRecord {
    pub position: usize,
    pub review_index: usize,
    pub role: Role,
}

impl PromptRecord {
    pub fn new(ds: &Dataset, prompt: &RenderedPrompt, fold: Option<&str>) -> Self {
        let truth = prompt.target_position.map(|p| ds.review(p));
        PromptRecord {
            family: prompt.family,
            template_version: TEMPLATE_VERSION.into(),
            fold: fold.map(str::to_owned),
            user: ds.user_name(prompt.target.0).to_owned(),
            item: ds.item_name(prompt.target.1).to_owned(),
            review_index: truth.map(|r| r.review_index),
            rating: truth.map(|r| r.rating),
            prompt: prompt.text.clone(),
            included: prompt
                .included
                .iter()
                .map(|i| IncludedRecord { position: i.position, review_index: ds.review(i.position).review_index, role: i.role })
                .collect(),
        }
    }
}

/// Newline-delimited JSON, one record per line.
pub fn write_prompt_records<W: Write>(records: &[PromptRecord], mut out: W) -> Result<(), PromptError> {
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|source| PromptError::Record { line: 0, source })?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_prompt_records<R: BufRead>(input: R) -> Result<Vec<PromptRecord>, PromptError> {
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| PromptError::Record { line: n + 1, source })?);
    }
    Ok(out)
}
