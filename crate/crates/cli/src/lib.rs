//! Command-line pipeline: synth, train, predict, evaluate and compare, each
//! driven by one TOML run configuration.

pub mod commands;
pub mod config;

pub use config::{Overrides, RunConfig};
