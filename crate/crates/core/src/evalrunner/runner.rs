use std::collections::{BTreeSet, HashMap};
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use thiserror::Error;

use super::coldstart::cold_start_strata;
use super::config::{ExperimentConfig, PredictorConfig, PredictorSpec, ScenarioConfig};
use super::metrics::{mae, mse};
use crate::backend::{BackendConfig, BackendError, Client, ParseStatus};
use crate::baselines::{Baseline, RatingModel};
use crate::corpus::{ingest, CorpusError, Dataset, IngestOptions, View};
use crate::exec::Exec;
use crate::kcore::{kcore_filter, CoreSpec};
use crate::perturb::{self, PerturbKind, PerturbSpec};
use crate::profiler::{build_profiles, ProfileTable};
use crate::promptkit::{
    build_few_shot, build_profiled_input, build_zero_shot, write_prompt_records, ByteHeuristic, Family, PromptRecord,
    RenderedPrompt, Target,
};
use crate::rng::SplitMix64;
use crate::splitter::{split, SplitResult};

/// Errors that stop the whole run. Failures inside one scenario are
/// recorded in its report rows instead.
#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Stage-level parallelism for baselines and prompt rendering. Backend
    /// calls are always bounded by the backend's `max_in_flight`.
    pub exec: Exec,
    pub code_version: String,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { exec: Exec::Parallel, code_version: env!("CARGO_PKG_VERSION").into() }
    }
}

/// One concrete point of a scenario grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioInstance {
    pub id: String,
    /// Which config entry produced it: original, no-reviews, remove, ...
    pub group: String,
    /// Grid level as printed, or `-`.
    pub level: String,
    pub k: usize,
    pub perturb: Option<PerturbSpec>,
    /// Profiled-prompt predictors drop profile summaries.
    pub rating_only: bool,
    pub cold_start: Option<usize>,
}

pub fn expand_scenarios(cfg: &ExperimentConfig) -> Vec<ScenarioInstance> {
    let base = |id: String, group: &str, level: String| ScenarioInstance {
        id,
        group: group.into(),
        level,
        k: cfg.core.k,
        perturb: None,
        rating_only: false,
        cold_start: None,
    };
    let mut out = Vec::new();
    for s in &cfg.scenarios {
        match s {
            ScenarioConfig::Original => out.push(base("original".into(), "original", "-".into())),
            ScenarioConfig::NoReviews => out.push(ScenarioInstance {
                perturb: Some(PerturbSpec { kind: PerturbKind::Remove, fraction: 1.0, seed: cfg.seed }),
                rating_only: true,
                ..base("no-reviews".into(), "no-reviews", "-".into())
            }),
            ScenarioConfig::Remove { fractions, seed } | ScenarioConfig::Distort { fractions, seed } => {
                let kind = if matches!(s, ScenarioConfig::Remove { .. }) { PerturbKind::Remove } else { PerturbKind::Distort };
                for &f in fractions {
                    out.push(ScenarioInstance {
                        perturb: Some(PerturbSpec { kind, fraction: f, seed: seed.unwrap_or(cfg.seed) }),
                        ..base(format!("{kind}@{f}"), &kind.to_string(), f.to_string())
                    });
                }
            }
            ScenarioConfig::Sparsity { ks } => {
                for &k in ks {
                    out.push(ScenarioInstance { k, ..base(format!("kcore@{k}"), "sparsity", k.to_string()) });
                }
            }
            ScenarioConfig::ColdStart { max_f } => out.push(ScenarioInstance {
                cold_start: Some(*max_f),
                ..base("cold-start".into(), "cold-start", "-".into())
            }),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub scenario: String,
    pub group: String,
    pub level: String,
    pub k: usize,
    pub predictor: String,
    /// `ok`, or `error: <message>` when the scenario or predictor aborted.
    pub status: String,
    pub n_eval: usize,
    pub mae: Option<f64>,
    pub mse: Option<f64>,
    pub parse_failure_rate: Option<f64>,
    pub n_failed: usize,
    pub demo_shortfall: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColdStartRow {
    pub scenario: String,
    pub predictor: String,
    pub f: usize,
    pub n_users: usize,
    pub n_interactions: usize,
    pub mae: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingRow {
    pub scenario: String,
    pub predictor: String,
    pub wall_ms: u128,
    pub backend_calls: usize,
    pub cache_hits: usize,
}

/// Counts from scanning every rendered prompt and profile of the run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LeakageAudit {
    pub prompts_scanned: usize,
    pub profiles_scanned: usize,
    /// Prompts showing the review of the interaction they ask about.
    pub target_review_shown: usize,
    /// Prompt entries outside the training fold.
    pub outside_train: usize,
    /// Profile source reviews outside the training fold.
    pub profile_sources_outside: usize,
}

impl LeakageAudit {
    pub fn clean(&self) -> bool {
        self.target_review_shown == 0 && self.outside_train == 0 && self.profile_sources_outside == 0
    }

    fn scan_prompt(&mut self, prompt: &RenderedPrompt, train: &View<'_>) {
        self.prompts_scanned += 1;
        if prompt.included.iter().any(|i| Some(i.position) == prompt.target_position) {
            self.target_review_shown += 1;
        }
        self.outside_train += prompt.included.iter().filter(|i| !train.contains(i.position)).count();
    }

    fn merge(&mut self, o: LeakageAudit) {
        self.prompts_scanned += o.prompts_scanned;
        self.profiles_scanned += o.profiles_scanned;
        self.target_review_shown += o.target_review_shown;
        self.outside_train += o.outside_train;
        self.profile_sources_outside += o.profile_sources_outside;
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub config_digest: String,
    pub code_version: String,
    pub seed: u64,
    pub split_seed: u64,
    pub rows: Vec<ReportRow>,
    pub cold_start: Vec<ColdStartRow>,
    pub timings: Vec<TimingRow>,
    pub leakage: LeakageAudit,
    pub ingest_dropped_empty: usize,
    pub ingest_errors: usize,
}

/// Per-test-position outcome of one predictor.
struct Outcome {
    preds: Vec<Option<f64>>,
    labels: Vec<&'static str>,
    shortfall: usize,
    calls: usize,
    cache_hits: usize,
    audit: LeakageAudit,
}

struct Scenario<'a> {
    inst: &'a ScenarioInstance,
    dataset: &'a Dataset,
    split: &'a SplitResult,
    train: View<'a>,
    test: View<'a>,
}

struct Runner<'c> {
    cfg: &'c ExperimentConfig,
    opts: &'c RunOptions,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io { path: path.to_owned(), source }
}

fn file_stem(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' }).collect()
}

fn create(path: &Path) -> Result<BufWriter<File>, String> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| format!("{}: {e}", path.display()))
}

/// Runs every scenario of the grid and writes per-scenario artifacts
/// (splits, perturbation manifests, predictions, optional prompt and
/// profile exports) below `cfg.output_dir`. Summary files are written by
/// [`super::write_report`].
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunReport, RunError> {
    fs::create_dir_all(&cfg.output_dir).map_err(io_err(&cfg.output_dir))?;
    let ingested = ingest(
        &cfg.dataset.path,
        cfg.dataset.format,
        IngestOptions { strict: false, drop_empty: cfg.dataset.drop_empty, exec: opts.exec },
    )?;
    log::info!(
        "ingested {} reviews ({} empty dropped, {} malformed)",
        ingested.dataset.len(),
        ingested.dropped_empty,
        ingested.errors.len()
    );
    let runner = Runner { cfg, opts };
    let mut report = RunReport {
        config_digest: cfg.digest(),
        code_version: opts.code_version.clone(),
        seed: cfg.seed,
        split_seed: cfg.split.seed,
        rows: Vec::new(),
        cold_start: Vec::new(),
        timings: Vec::new(),
        leakage: LeakageAudit::default(),
        ingest_dropped_empty: ingested.dropped_empty,
        ingest_errors: ingested.errors.len(),
    };

    let mut cores: HashMap<usize, (Dataset, Result<SplitResult, String>)> = HashMap::new();
    for inst in expand_scenarios(cfg) {
        let (ds, sp) = cores.entry(inst.k).or_insert_with(|| {
            let ds = kcore_filter(&ingested.dataset, CoreSpec { k: inst.k });
            let sp = runner.split_and_record(&ds, inst.k);
            (ds, sp)
        });
        log::info!("scenario {} ({} reviews)", inst.id, ds.len());
        match sp {
            Ok(sp) => runner.run_scenario(&inst, ds, sp, &mut report),
            Err(e) => runner.abort_scenario(&inst, &format!("split: {e}"), &mut report),
        }
    }
    Ok(report)
}

impl Runner<'_> {
    fn split_and_record(&self, ds: &Dataset, k: usize) -> Result<SplitResult, String> {
        let sp = split(ds, self.cfg.split).map_err(|e| e.to_string())?;
        let path = self.cfg.output_dir.join("splits").join(format!("k{k}.csv"));
        sp.write_manifest(ds, create(&path)?).map_err(|e| e.to_string())?;
        Ok(sp)
    }

    fn abort_scenario(&self, inst: &ScenarioInstance, message: &str, report: &mut RunReport) {
        log::warn!("scenario {} aborted: {message}", inst.id);
        for p in &self.cfg.predictors {
            report.rows.push(error_row(inst, &p.id, message));
        }
    }

    fn run_scenario(&self, inst: &ScenarioInstance, base: &Dataset, sp: &SplitResult, report: &mut RunReport) {
        if sp.train.is_empty() || sp.test.is_empty() {
            return self.abort_scenario(inst, "empty training or test fold", report);
        }
        let perturbed;
        let dataset = match inst.perturb {
            None => base,
            Some(spec) => match perturb::apply(base, &sp.train, spec) {
                Ok(p) => {
                    let path = self.cfg.output_dir.join("perturbations").join(format!("{}.csv", file_stem(&inst.id)));
                    if let Err(e) = create(&path).and_then(|w| perturb::write_manifest(&p.manifest, w).map_err(|e| e.to_string())) {
                        return self.abort_scenario(inst, &e, report);
                    }
                    perturbed = p.dataset;
                    &perturbed
                }
                Err(e) => return self.abort_scenario(inst, &format!("perturbation: {e}"), report),
            },
        };
        let sc = Scenario {
            inst,
            dataset,
            split: sp,
            train: View::new(dataset, &sp.train),
            test: View::new(dataset, &sp.test),
        };
        // non-empty train fold checked above
        let global = sc.train.mean_rating().unwrap_or(3.0);
        let truth: Vec<f64> = sc.test.reviews().map(|r| r.rating).collect();

        for p in &self.cfg.predictors {
            let start = Instant::now();
            let outcome = self.predict(&sc, p);
            let wall_ms = start.elapsed().as_millis();
            let outcome = match outcome.and_then(|o| self.write_predictions(&sc, &p.id, &o, global).map(|_| o)) {
                Ok(o) => o,
                Err(e) => {
                    log::warn!("scenario {} predictor {}: {e}", inst.id, p.id);
                    report.rows.push(error_row(inst, &p.id, &e));
                    report.timings.push(TimingRow { scenario: inst.id.clone(), predictor: p.id.clone(), wall_ms, backend_calls: 0, cache_hits: 0 });
                    continue;
                }
            };
            let imputed: Vec<f64> = outcome.preds.iter().map(|r| r.unwrap_or(global)).collect();
            let n_failed = outcome.preds.iter().filter(|r| r.is_none()).count();
            report.rows.push(ReportRow {
                scenario: inst.id.clone(),
                group: inst.group.clone(),
                level: inst.level.clone(),
                k: inst.k,
                predictor: p.id.clone(),
                status: "ok".into(),
                n_eval: imputed.len(),
                mae: mae(&imputed, &truth).ok(),
                mse: mse(&imputed, &truth).ok(),
                parse_failure_rate: Some(n_failed as f64 / imputed.len() as f64),
                n_failed,
                demo_shortfall: outcome.shortfall,
            });
            if let Some(max_f) = inst.cold_start {
                report.cold_start.extend(cold_start_rows(&sc, &p.id, max_f, &imputed));
            }
            report.timings.push(TimingRow {
                scenario: inst.id.clone(),
                predictor: p.id.clone(),
                wall_ms,
                backend_calls: outcome.calls,
                cache_hits: outcome.cache_hits,
            });
            report.leakage.merge(outcome.audit);
        }
    }

    fn predict(&self, sc: &Scenario<'_>, p: &PredictorConfig) -> Result<Outcome, String> {
        match &p.spec {
            PredictorSpec::Baseline { model, hyper } => {
                let fitted = Baseline::fit(*model, &sc.train, *hyper).map_err(|e| format!("fit: {e}"))?;
                let ds = sc.dataset;
                let preds = self.opts.exec.map(sc.test.positions(), |&q| {
                    let r = ds.review(q);
                    Some(fitted.predict(r.user, r.item))
                });
                Ok(Outcome::plain(preds))
            }
            PredictorSpec::External { path } => read_external(sc, path),
            PredictorSpec::Llm { family, rating_only, backend } => {
                self.predict_llm(sc, &p.id, *family, *rating_only || sc.inst.rating_only, backend)
            }
        }
    }

    fn render(&self, sc: &Scenario<'_>, family: Family, profiles: &ProfileTable, rating_only: bool, positions: &[usize]) -> Vec<RenderedPrompt> {
        let ds = sc.dataset;
        let policy = &self.cfg.budget;
        self.opts.exec.map(positions, |&q| {
            let target = Target::of(ds, q);
            match family {
                Family::ZeroShot => build_zero_shot(target, &sc.train, policy, &ByteHeuristic),
                Family::FewShot => {
                    let mut gen = SplitMix64::derive(self.cfg.seed, ds.review(q).review_index as u64);
                    build_few_shot(&mut gen, target, &sc.train, policy, &ByteHeuristic)
                }
                Family::Profiled => build_profiled_input(target, profiles, &sc.train, policy, rating_only),
            }
        })
    }

    fn predict_llm(
        &self,
        sc: &Scenario<'_>,
        id: &str,
        family: Family,
        rating_only: bool,
        backend: &BackendConfig,
    ) -> Result<Outcome, String> {
        let client = Client::from_config(backend, Some(&sc.train)).map_err(|e| format!("backend: {e}"))?;
        let mut audit = LeakageAudit::default();
        let stem = format!("{}__{}", file_stem(&sc.inst.id), file_stem(id));

        let profiles = if family == Family::Profiled && !rating_only {
            let t = build_profiles(&client, &sc.train, client.exec()).map_err(|e| format!("profiles: {e}"))?;
            audit.profiles_scanned += t.profiles().len();
            audit.profile_sources_outside += t.positions_outside(&sc.train).len();
            if self.cfg.export_prompts {
                let path = self.cfg.output_dir.join("profiles").join(format!("{stem}.csv"));
                t.write_csv(sc.dataset, create(&path)?).map_err(|e| e.to_string())?;
            }
            t
        } else {
            ProfileTable::default()
        };

        let prompts = self.render(sc, family, &profiles, rating_only, sc.test.positions());
        for pr in &prompts {
            audit.scan_prompt(pr, &sc.train);
        }
        if self.cfg.export_prompts {
            let mut records = Vec::new();
            for (fold, positions) in [("train", &sc.split.train), ("validation", &sc.split.validation)] {
                for pr in self.render(sc, family, &profiles, rating_only, positions) {
                    audit.scan_prompt(&pr, &sc.train);
                    records.push(PromptRecord::new(sc.dataset, &pr, Some(fold)));
                }
            }
            records.extend(prompts.iter().map(|pr| PromptRecord::new(sc.dataset, pr, Some("test"))));
            let path = self.cfg.output_dir.join("prompts").join(format!("{stem}.ndjson"));
            write_prompt_records(&records, create(&path)?).map_err(|e| e.to_string())?;
        }

        let results = client.exec().map(&prompts, |pr| client.predict(pr));
        let mut out = Outcome::plain(Vec::with_capacity(prompts.len()));
        out.shortfall = prompts.iter().map(|p| p.shortfall).sum();
        out.audit = audit;
        for r in results {
            match r {
                Ok(pred) => {
                    out.calls += usize::from(!pred.cache_hit);
                    out.cache_hits += usize::from(pred.cache_hit);
                    out.labels.push(match pred.parse_status {
                        ParseStatus::Ok => "ok",
                        ParseStatus::Clamped => "clamped",
                        ParseStatus::Failed => "parse-failed",
                    });
                    out.preds.push(pred.rating);
                }
                // a request that never succeeded is imputed like an unparseable answer
                Err(BackendError::Exhausted { .. }) => {
                    out.calls += 1;
                    out.labels.push("request-failed");
                    out.preds.push(None);
                }
                Err(e) => return Err(format!("backend: {e}")),
            }
        }
        Ok(out)
    }

    fn write_predictions(&self, sc: &Scenario<'_>, id: &str, o: &Outcome, global: f64) -> Result<(), String> {
        let path = self.cfg.output_dir.join("predictions").join(format!("{}__{}.csv", file_stem(&sc.inst.id), file_stem(id)));
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(create(&path)?);
        let err = |e: csv::Error| e.to_string();
        w.write_record(["review_index", "user", "item", "rating", "prediction", "status"]).map_err(err)?;
        for (k, &q) in sc.test.positions().iter().enumerate() {
            let r = sc.dataset.review(q);
            w.write_record([
                r.review_index.to_string().as_str(),
                sc.dataset.user_name(r.user),
                sc.dataset.item_name(r.item),
                &r.rating.to_string(),
                &o.preds[k].unwrap_or(global).to_string(),
                o.labels[k],
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| e.to_string())
    }
}

impl Outcome {
    fn plain(preds: Vec<Option<f64>>) -> Self {
        let labels = preds.iter().map(|p| if p.is_some() { "ok" } else { "missing" }).collect();
        Outcome { preds, labels, shortfall: 0, calls: 0, cache_hits: 0, audit: LeakageAudit::default() }
    }
}

fn error_row(inst: &ScenarioInstance, predictor: &str, message: &str) -> ReportRow {
    ReportRow {
        scenario: inst.id.clone(),
        group: inst.group.clone(),
        level: inst.level.clone(),
        k: inst.k,
        predictor: predictor.into(),
        status: format!("error: {message}"),
        n_eval: 0,
        mae: None,
        mse: None,
        parse_failure_rate: None,
        n_failed: 0,
        demo_shortfall: 0,
    }
}

fn cold_start_rows(sc: &Scenario<'_>, predictor: &str, max_f: usize, imputed: &[f64]) -> Vec<ColdStartRow> {
    let strata = cold_start_strata(&sc.train, &sc.test, max_f);
    let index: HashMap<usize, usize> = sc.test.positions().iter().enumerate().map(|(k, &q)| (q, k)).collect();
    strata
        .buckets
        .iter()
        .map(|(&f, positions)| {
            let pred: Vec<f64> = positions.iter().map(|q| imputed[index[q]]).collect();
            let truth: Vec<f64> = positions.iter().map(|&q| sc.dataset.review(q).rating).collect();
            let users: BTreeSet<_> = positions.iter().map(|&q| sc.dataset.review(q).user).collect();
            ColdStartRow {
                scenario: sc.inst.id.clone(),
                predictor: predictor.into(),
                f,
                n_users: users.len(),
                n_interactions: positions.len(),
                mae: mae(&pred, &truth).ok(),
            }
        })
        .collect()
}

/// Predictions made outside the harness, keyed by `review_index`. Every
/// test interaction must be covered; user and item must match.
fn read_external(sc: &Scenario<'_>, path: &Path) -> Result<Outcome, String> {
    #[derive(serde::Deserialize)]
    struct Row {
        review_index: usize,
        user: String,
        item: String,
        rating: f64,
    }
    let mut rdr = csv::Reader::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut by_index = HashMap::new();
    for (n, row) in rdr.deserialize::<Row>().enumerate() {
        let row = row.map_err(|e| format!("{} row {}: {e}", path.display(), n + 1))?;
        by_index.insert(row.review_index, row);
    }
    let mut preds = Vec::with_capacity(sc.test.len());
    for r in sc.test.reviews() {
        let row = by_index
            .get(&r.review_index)
            .ok_or_else(|| format!("{} has no prediction for review_index {}", path.display(), r.review_index))?;
        if row.user != sc.dataset.user_name(r.user) || row.item != sc.dataset.item_name(r.item) {
            return Err(format!("{}: review_index {} names a different interaction", path.display(), r.review_index));
        }
        preds.push(row.rating.is_finite().then(|| row.rating.clamp(1.0, 5.0)));
    }
    Ok(Outcome::plain(preds))
}
