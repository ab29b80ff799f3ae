//! Experiment driver for intervention estimates in Gaussian process networks:
//! data generation, DAG sampling, intervention curves and evaluation.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;

pub use config::RunConfig;
pub use error::{CliError, CliResult};
