//! Commands behind the `stplan` binary: single plans, closed-loop runs,
//! solver benchmarks and planner comparisons.

pub mod bench;
pub mod config;
pub mod error;
pub mod output;
pub mod plan;
pub mod sim;

pub use bench::{cmd_bench, warm_cold_cycles, BenchConfig, BenchRow};
pub use config::{load_scenario, Overrides, RunConfig};
pub use error::{CliError, CliResult};
pub use plan::{cmd_plan, PlanOutcome};
pub use sim::{cmd_compare, cmd_sim, CompareOutcome, CompareSummary, MetricsRow};
