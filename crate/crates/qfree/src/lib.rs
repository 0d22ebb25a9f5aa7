//! Command-line harness around `qfree-core`: run configuration files,
//! checkpoints, per-run CSV output, seed sweeps and their aggregation.

pub mod acceptance;
pub mod analysis;
pub mod checkpoint;
pub mod config;
pub mod files;
pub mod report;
pub mod runner;
