//! File formats, configuration, the training driver, evaluation reports,
//! plots and the command-line interface around `hydranet-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod container;
pub mod error;
pub mod events;
pub mod fit;
pub mod mask;
pub mod pipeline;
pub mod plot;
pub mod report;

pub use error::{Error, Result};
