//! File formats, dataset directories, checkpointing, the training loop and
//! the `mee` command line on top of `mee-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod embed;
pub mod error;
pub mod format;
pub mod report;
pub mod trainer;

pub use error::{Error, Result};
