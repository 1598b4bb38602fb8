//! Benchmark harness for review-aware rating prediction.
//!
//! The pipeline ingests review dumps ([`corpus`]), optionally restricts them
//! to a k-core ([`kcore`]), splits them into folds ([`splitter`]), perturbs
//! training review text ([`perturb`]), builds model inputs ([`promptkit`],
//! [`profiler`]), predicts with a model backend ([`backend`]) or a native
//! baseline ([`baselines`]), and reports MAE/MSE overall and per cold-start
//! stratum ([`evalrunner`]).

pub mod backend;
pub mod baselines;
pub mod corpus;
pub mod evalrunner;
pub mod exec;
pub mod kcore;
pub mod perturb;
pub mod profiler;
pub mod promptkit;
pub mod rng;
pub mod splitter;
pub mod synth;

pub use corpus::{Dataset, ItemId, Review, UserId, View};
pub use exec::Exec;
