//! Batch front end over `qtomo-core`: run configuration, file formats,
//! parallel Monte Carlo execution, and the five CLI subcommands
//! (bases, simulate, estimate, mc, test).
//!
//! Everything observable is deterministic given the configuration: every
//! emitted file is a pure function of the resolved `RunConfig`, and the
//! run manifest records enough (config, seed, RNG name, output hashes)
//! to reproduce any artifact byte for byte.

pub mod commands;
pub mod config;
pub mod error;
pub mod formats;
pub mod runner;

pub use error::{CliError, CliResult};
