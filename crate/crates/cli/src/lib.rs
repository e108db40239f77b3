//! Command-line pipeline: generate, parse, analyze, build, train, evaluate
//! and extract, each stage writing under `<workspace>/<run_id>/<stage>/`.

pub mod config;
pub mod error;
pub mod stages;
pub mod stamp;

pub use config::RunConfig;
pub use error::{CliError, Result};
pub use stages::{Outcome, Pipeline};
