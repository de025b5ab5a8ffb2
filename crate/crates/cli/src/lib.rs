//! Batch front end for the attribution pipeline: data generation, classifier
//! training, support-model training, map export and hull evaluation.

pub mod commands;
pub mod config;
pub mod error;

pub use commands::Layout;
pub use config::RunConfig;
pub use error::CliError;
