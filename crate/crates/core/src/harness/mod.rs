//! Experiment plumbing: accuracy metrics, the solver comparison matrix, the
//! rotation-magnitude sweep, and the CSV/JSON files they read and write.

mod compare;
pub mod io;
mod metrics;
mod pool;
mod sweep;

pub use compare::{run_comparison, ComparisonConfig, ComparisonReport, ComparisonRow, RowSummary};
pub use metrics::{compute_metrics, Metrics, TrialRecord};
pub use pool::{worker_count, THREADS_ENV};
pub use sweep::{run_rotation_sweep, AngleSummary, MetricStat, SweepConfig, SweepCsvRow, SweepReport, METRIC_NAMES};
