//! Command-line front end: run configuration, dataset loading, the
//! search / finetune / eval / cost / sweep commands, and artifact output.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod experiments;
pub mod output;

pub use config::{parse_topology, RunConfig};
pub use error::{CliError, CliResult};
