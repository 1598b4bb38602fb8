//! Metrics, cold-start strata, scenario orchestration and report files.

mod coldstart;
mod config;
mod metrics;
mod report;
mod runner;

pub use coldstart::{cold_start_strata, ColdStartStrata};
pub use config::{
    ConfigError, CoreConfig, DatasetConfig, ExperimentConfig, PredictorConfig, PredictorSpec, ScenarioConfig,
    CONFIG_VERSION,
};
pub use metrics::{mae, mse, MetricError};
pub use report::{format_summary, read_report, write_report, REPORT_COLUMNS};
pub use runner::{
    expand_scenarios, run_experiment, ColdStartRow, LeakageAudit, ReportRow, RunError, RunOptions, RunReport,
    ScenarioInstance, TimingRow,
};
