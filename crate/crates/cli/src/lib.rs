//! Command-line front end: run configuration, dataset directories and the
//! `selftest`, `simulate`, `augment`, `select`, `report` and `generate`
//! commands.

pub mod augment;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod models;
pub mod report;
pub mod select;
pub mod simulate;
pub mod svg;

pub use cli::run_with;
