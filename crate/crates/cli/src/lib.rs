//! Experiment plumbing for the `graphnav` binary: config loading, artifact
//! files and the subcommands.

pub mod artifacts;
pub mod commands;
pub mod config;

/// Environment variable that overrides the configured output directory.
pub const OUT_ENV: &str = "GRAPHNAV_OUT";
