//! Experiment harness for the graph prompt pipeline: configuration,
//! metrics, structured reports, and the experiment drivers behind the
//! `graphprompt` binary.

pub mod config;
pub mod data;
pub mod error;
pub mod experiments;
pub mod metrics;
pub mod report;

pub use error::{CliError, Result};
