//! Operational surface: configuration, datasets, run manifests, plots and
//! the command-line interface.

pub mod cli;
pub mod config;
pub mod data;
pub mod manifest;
pub mod plot;

pub use manifest::{RunManifest, RUNS_ENV};
