//! Training, evaluation, statistics, cost accounting and reports.

pub mod cost;
pub mod error;
pub mod metrics;
pub mod report;
pub mod sweep;
pub mod train;

pub use error::{CliError, Result};
