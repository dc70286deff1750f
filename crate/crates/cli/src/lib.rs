//! Command-line orchestration of the `shapeharmony` stages.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod stages;

pub use config::{GroundTruth, PipelineConfig, SsmSettings, Stage};
pub use error::CliError;
