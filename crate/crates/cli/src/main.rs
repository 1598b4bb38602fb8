use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use revbench::backend::Client;
use revbench::corpus::{ingest, Format, IngestOptions};
use revbench::evalrunner::{
    format_summary, read_report, run_experiment, write_report, ExperimentConfig, PredictorSpec, RunOptions,
};
use revbench::kcore::{core_stats, kcore_filter, write_core_table, CoreSpec};
use revbench::perturb::{self, PerturbKind, PerturbSpec};
use revbench::profiler::build_profiles;
use revbench::splitter::{split, SplitResult, SplitSpec};
use revbench::{Dataset, Exec, View};

#[derive(Parser)]
#[command(name = "revbench", version, about = "Benchmark harness for review-aware rating prediction")]
struct Cli {
    /// Run every stage on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Input {
    /// Review dump (`.gz` is decompressed).
    #[arg(long, short)]
    input: PathBuf,
    /// amazon-2014-jsonlines or generic-csv
    #[arg(long, default_value = "generic-csv")]
    format: Format,
    /// Keep reviews whose text is empty.
    #[arg(long)]
    keep_empty: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Remove,
    Distort,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize a dump to generic CSV and report what was dropped.
    Ingest {
        #[command(flatten)]
        input: Input,
        /// Abort on the first malformed record.
        #[arg(long)]
        strict: bool,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Users/items/reviews per k-core threshold; optionally save one core.
    Kcore {
        #[command(flatten)]
        input: Input,
        #[arg(long, value_delimiter = ',', default_value = "0,3,5,8,10")]
        ks: Vec<usize>,
        /// Also write the k-core for this k to `--output`.
        #[arg(long, requires = "output")]
        filter: Option<usize>,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Write a train/validation/test manifest.
    Split {
        #[command(flatten)]
        input: Input,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_delimiter = ',', num_args = 3, default_value = "0.8,0.1,0.1")]
        ratios: Vec<f64>,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Remove or swap training-fold review text.
    Perturb {
        #[command(flatten)]
        input: Input,
        /// Split manifest from `split`.
        #[arg(long)]
        split: PathBuf,
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long)]
        fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Perturbed dataset (generic CSV).
        #[arg(long, short)]
        output: PathBuf,
        /// Per-review record of what changed.
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Build user and item profiles over the training fold of a config.
    Profile {
        #[arg(long, short)]
        config: PathBuf,
        /// Id of the llm predictor whose backend writes the profiles.
        #[arg(long)]
        predictor: String,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Run every scenario of a config and write the report files.
    Run {
        #[arg(long, short)]
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Print the summary table of a finished run.
    Report {
        /// Run output directory or a report.csv.
        path: PathBuf,
    },
}

fn load(input: &Input, exec: Exec) -> Result<Dataset> {
    let opts = IngestOptions { drop_empty: !input.keep_empty, exec, ..Default::default() };
    let rep = ingest(&input.input, input.format, opts).with_context(|| format!("reading {}", input.input.display()))?;
    if !rep.errors.is_empty() {
        log::warn!("{} malformed records skipped", rep.errors.len());
    }
    Ok(rep.dataset)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn read_split(ds: &Dataset, path: &Path) -> Result<SplitResult> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(SplitResult::read_manifest(ds, SplitSpec::default(), f)?)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let exec = if cli.sequential { Exec::Sequential } else { Exec::Parallel };

    match cli.command {
        Command::Ingest { input, strict, output } => {
            let opts = IngestOptions { strict, drop_empty: !input.keep_empty, exec };
            let rep = ingest(&input.input, input.format, opts)?;
            for e in rep.errors.iter().take(10) {
                log::warn!("record {}: {}", e.record, e.message);
            }
            rep.dataset.write_csv(create(&output)?)?;
            let s = core_stats(&rep.dataset);
            println!(
                "{} reviews, {} users, {} items; dropped {} empty, {} out-of-range ratings, {} malformed",
                s.reviews,
                s.users,
                s.items,
                rep.dropped_empty,
                rep.rejected_rating,
                rep.errors.len()
            );
        }
        Command::Kcore { input, ks, filter, output } => {
            let ds = load(&input, exec)?;
            write_core_table(&ds, &ks, io::stdout().lock())?;
            if let (Some(k), Some(path)) = (filter, output) {
                kcore_filter(&ds, CoreSpec { k }).write_csv(create(&path)?)?;
            }
        }
        Command::Split { input, seed, ratios, output } => {
            let ds = load(&input, exec)?;
            let spec = SplitSpec { seed, ratios: [ratios[0], ratios[1], ratios[2]] };
            let sp = split(&ds, spec)?;
            sp.write_manifest(&ds, create(&output)?)?;
            println!("train {}, validation {}, test {}", sp.train.len(), sp.validation.len(), sp.test.len());
        }
        Command::Perturb { input, split, kind, fraction, seed, output, manifest } => {
            let ds = load(&input, exec)?;
            let sp = read_split(&ds, &split)?;
            let kind = match kind {
                Kind::Remove => PerturbKind::Remove,
                Kind::Distort => PerturbKind::Distort,
            };
            let p = perturb::apply(&ds, &sp.train, PerturbSpec { kind, fraction, seed })?;
            p.dataset.write_csv(create(&output)?)?;
            perturb::write_manifest(&p.manifest, create(&manifest)?)?;
            println!("{kind}: {} of {} training reviews changed", p.manifest.len(), sp.train.len());
        }
        Command::Profile { config, predictor, output } => {
            let cfg = ExperimentConfig::load(&config)?;
            let Some(p) = cfg.predictors.iter().find(|p| p.id == predictor) else {
                bail!("no predictor `{predictor}` in {}", config.display());
            };
            let PredictorSpec::Llm { backend, .. } = &p.spec else {
                bail!("predictor `{predictor}` has no model backend");
            };
            let opts = IngestOptions { drop_empty: cfg.dataset.drop_empty, exec, ..Default::default() };
            let ds = kcore_filter(&ingest(&cfg.dataset.path, cfg.dataset.format, opts)?.dataset, CoreSpec { k: cfg.core.k });
            let sp = split(&ds, cfg.split)?;
            let train = View::new(&ds, &sp.train);
            let client = Client::from_config(backend, Some(&train))?;
            let table = build_profiles(&client, &train, client.exec())?;
            table.write_csv(&ds, create(&output)?)?;
            let missing = table.profiles().iter().filter(|p| p.summary.is_none()).count();
            println!("{} profiles ({missing} without summary)", table.profiles().len());
        }
        Command::Run { config, output_dir } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(dir) = output_dir {
                cfg.output_dir = dir;
            }
            let report = run_experiment(&cfg, &RunOptions { exec, ..Default::default() })?;
            write_report(&report, &cfg.output_dir)?;
            print!("{}", format_summary(&report.rows));
            if !report.leakage.clean() {
                log::error!("leakage audit failed: {:?}", report.leakage);
            }
            let failed = report.rows.iter().filter(|r| r.status != "ok").count();
            if failed > 0 {
                log::warn!("{failed} scenario/predictor pairs aborted; see report.csv");
            }
            println!("reports written to {}", cfg.output_dir.display());
        }
        Command::Report { path } => {
            let file = if path.is_dir() { path.join("report.csv") } else { path };
            let (header, rows) =
                read_report(File::open(&file).with_context(|| format!("opening {}", file.display()))?)?;
            let mut out = io::stdout().lock();
            for h in header {
                writeln!(out, "# {h}")?;
            }
            write!(out, "{}", format_summary(&rows))?;
        }
    }
    Ok(())
}
