//! Configuration, experiment drivers, result export and manifests for the
//! `nlmc` command-line tool.

pub mod commands;
pub mod config;
pub mod error;
pub mod experiments;
pub mod manifest;
pub mod table;

pub use config::{ExperimentConfig, Preset};
pub use error::{HarnessError, Result};
pub use table::{Cell, PlotData, ResultTable};
