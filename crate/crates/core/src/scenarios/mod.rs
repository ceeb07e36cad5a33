//! Experiment harness: scenario description, simulation wiring, metrics,
//! sweeps and the built-in suites.

pub mod config;
pub mod metrics;
pub mod sim;
pub mod suites;
pub mod sweep;

pub use config::{CheatPolicy, FlowConfig, ScenarioConfig, Warmup};
pub use metrics::{jain_index, queueing_delay_series, MetricsSample, SummaryStats};
pub use sim::{run_scenario, RunOutput, Simulation};
pub use sweep::{sweep, Axis};
