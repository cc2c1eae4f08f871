//! Pipelines, run records and reports on top of `affect-geometry`.

pub mod commands;
pub mod files;
pub mod manifest;
pub mod pipeline;
pub mod report;

pub use manifest::{Manifest, Stage};
pub use pipeline::{run, RunRecord};
