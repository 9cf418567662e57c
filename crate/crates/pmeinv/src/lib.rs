//! File formats, experiment configuration and the stage runner on top of
//! `pmeinv-core`.

pub mod config;
pub mod error;
pub mod experiment;
pub mod format;
pub mod noise;
pub mod plots;
pub mod report;

pub use config::{ExperimentConfig, Stage};
pub use error::AppError;
pub use experiment::{run, Context};
pub use plots::{emit_plots, PlotManifest, Selection};
pub use report::{Check, RunReport, Verdict};
