//! Experiment configuration, read from TOML.
//!
//! ```toml
//! version = 1
//! seed = 42
//! output_dir = "out"
//! export_prompts = false
//!
//! [dataset]
//! path = "reviews.csv"
//! format = "generic-csv"          # or "amazon-2014-jsonlines"
//!
//! [core]
//! k = 5
//!
//! [split]
//! seed = 7
//! ratios = [0.8, 0.1, 0.1]
//!
//! [budget]                         # optional, defaults shown in BudgetPolicy
//! max_review_tokens = 7680
//!
//! [[predictors]]
//! id = "mf"
//! kind = "baseline"
//! model = "mf"                     # global-mean | user-mean | bias | mf
//! hyper = { dim = 16, lr = 0.005, reg = 0.02, epochs = 30, seed = 0 }
//!
//! [[predictors]]
//! id = "zero-shot"
//! kind = "llm"
//! family = "zero-shot"             # zero-shot | few-shot | profiled
//! backend = { kind = "mock", mock = "user-mean", cache_dir = "cache" }
//!
//! [[predictors]]
//! id = "fine-tuned"
//! kind = "external"                # predictions CSV from the fine-tuning run
//! path = "predictions.csv"
//!
//! [[scenarios]]
//! kind = "remove"                  # original | no-reviews | remove | distort | sparsity | cold-start
//! fractions = [0.0, 0.25, 0.5, 0.75, 1.0]
//! ```
//!
//! Relative paths resolve against the directory holding the config file.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backend::BackendConfig;
use crate::baselines::{BaselineKind, Hyper};
use crate::corpus::Format;
use crate::promptkit::{BudgetPolicy, Family};
use crate::splitter::SplitSpec;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config syntax: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: PathBuf,
    pub format: Format,
    /// Drop empty-text reviews at ingestion (before k-core filtering).
    #[serde(default = "yes")]
    pub drop_empty: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct CoreConfig {
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PredictorSpec {
    Baseline {
        model: BaselineKind,
        #[serde(default)]
        hyper: Hyper,
    },
    Llm {
        family: Family,
        #[serde(default)]
        rating_only: bool,
        #[serde(default)]
        backend: BackendConfig,
    },
    /// Predictions produced elsewhere: CSV `review_index,user,item,rating`.
    External { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorConfig {
    pub id: String,
    #[serde(flatten)]
    pub spec: PredictorSpec,
}

impl PredictorConfig {
    /// Whether the predictor's input contains no review text at all.
    pub fn text_blind(&self) -> bool {
        match &self.spec {
            PredictorSpec::Baseline { .. } => true,
            PredictorSpec::Llm { family, rating_only, .. } => *family == Family::Profiled && *rating_only,
            PredictorSpec::External { .. } => false,
        }
    }
}

fn default_fractions() -> Vec<f64> {
    vec![0.0, 0.25, 0.5, 0.75, 1.0]
}

fn default_ks() -> Vec<usize> {
    vec![0, 3, 5, 8, 10]
}

fn default_max_f() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ScenarioConfig {
    /// Unmodified data.
    Original,
    /// All training review text removed; ratings kept.
    NoReviews,
    Remove {
        #[serde(default = "default_fractions")]
        fractions: Vec<f64>,
        seed: Option<u64>,
    },
    Distort {
        #[serde(default = "default_fractions")]
        fractions: Vec<f64>,
        seed: Option<u64>,
    },
    Sparsity {
        #[serde(default = "default_ks")]
        ks: Vec<usize>,
    },
    ColdStart {
        #[serde(default = "default_max_f")]
        max_f: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub export_prompts: bool,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub core: CoreConfig,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub budget: BudgetPolicy,
    pub predictors: Vec<PredictorConfig>,
    pub scenarios: Vec<ScenarioConfig>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    /// Parses, resolves relative paths against the file's directory and
    /// validates.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_owned(), source })?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.dataset.path);
        fix(&mut self.output_dir);
        for p in &mut self.predictors {
            match &mut p.spec {
                PredictorSpec::Llm { backend, .. } => {
                    if let Some(dir) = backend.cache_dir.as_mut() {
                        fix(dir);
                    }
                }
                PredictorSpec::External { path } => fix(path),
                PredictorSpec::Baseline { .. } => {}
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.version != CONFIG_VERSION {
            return bad(format!("unsupported config version {} (expected {CONFIG_VERSION})", self.version));
        }
        if !self.dataset.path.is_file() {
            return bad(format!("dataset file {} does not exist", self.dataset.path.display()));
        }
        if self.scenarios.is_empty() {
            return bad("scenario list is empty".into());
        }
        if self.predictors.is_empty() {
            return bad("predictor list is empty".into());
        }
        self.split.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.budget.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let mut seen = HashSet::new();
        for p in &self.predictors {
            if !seen.insert(p.id.as_str()) {
                return bad(format!("duplicate predictor id `{}`", p.id));
            }
            match &p.spec {
                PredictorSpec::Llm { backend, .. } => {
                    backend.validate().map_err(|e| ConfigError::Invalid(format!("predictor {}: {e}", p.id)))?
                }
                PredictorSpec::External { path } if !path.is_file() => {
                    return bad(format!("predictor {}: predictions file {} does not exist", p.id, path.display()))
                }
                _ => {}
            }
        }
        for s in &self.scenarios {
            match s {
                ScenarioConfig::Remove { fractions, .. } | ScenarioConfig::Distort { fractions, .. } => {
                    if fractions.is_empty() || fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
                        return bad("perturbation fractions must be a non-empty list within [0, 1]".into());
                    }
                }
                ScenarioConfig::Sparsity { ks } if ks.is_empty() => return bad("sparsity scenario needs ks".into()),
                _ => {}
            }
        }
        Ok(())
    }

    /// SHA-256 over the canonical TOML serialization, excluding
    /// `output_dir` so that repeated runs into different directories share
    /// a digest.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let text = toml::to_string(&c).unwrap_or_else(|_| format!("{c:?}"));
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}
