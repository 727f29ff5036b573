//! Scenario harness: configuration, closed-loop runs, metrics and plots.

// `!(x > 0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod metrics;
pub mod output;
pub mod plots;
pub mod record;
pub mod run;

pub use config::{load_scenario, parse_scenario, ConfigError, Scenario};
pub use record::{Row, RunRecord};
pub use run::{run, Mode, RunError};
