//! Measurement harness: topic cadence and bandwidth, comparison against
//! reference tables, and closed-loop track experiments.

pub mod compare;
pub mod experiment;
pub mod measure;
pub mod pursuit;

pub use compare::{compare_report, ComparisonReport, ReferenceEntry, ReferenceTable, Verdict};
pub use experiment::{run_scenario, run_track_experiment, ExperimentConfig, ExperimentReport, ScenarioRun};
pub use measure::{collect, measure, MetricsRecord, TopicLog};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("no data on {topic} ({received} messages before timeout)")]
    NoData { topic: String, received: usize },
    #[error("bus: {0}")]
    Bus(String),
    #[error("{0}")]
    Io(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("no lane loop: {0}")]
    NoLoop(String),
    #[error("laps must be at least 1")]
    ZeroLaps,
    #[error("ego stalled in scenario {scenario} after {laps:.2} laps")]
    Stalled { scenario: String, laps: f64 },
    #[error("setup: {0}")]
    Setup(String),
}
