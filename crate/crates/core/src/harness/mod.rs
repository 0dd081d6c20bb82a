//! Replicated experiments: configuration, per-replication simulation under
//! common random numbers, and PICS/EOC aggregation to CSV.

mod config;
mod metrics;
mod runner;

pub use config::{scenario_bounds, ConfigError, Configuration, ExperimentConfig, Scenario};
pub(crate) use metrics::write_text;
pub use metrics::{
    correlation, mean_stderr, sig10, write_csv, MetricRow, MetricSeries, PairedComparison,
    PolicyOutcomes,
};
pub use runner::{
    run_experiment, run_replication, simulate, HarnessError, ReplicationResult, SimError,
    SimOutcome, Trace, TraceSummary,
};
