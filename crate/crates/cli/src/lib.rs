//! File IO, training and evaluation drivers, ablation reports and the
//! command line for the PromptCodec speech codec. The model itself lives in
//! `promptcodec-core`.

pub mod ablation;
pub mod checkpoint;
pub mod cli;
pub mod config;
mod error;
pub mod manifest;
pub mod run;
pub mod wav;

pub use error::{CliError, Result};
pub use promptcodec_core as core;
