//! File formats, exports and the command line for the kgeir adaptive exercise-selection
//! engine. The algorithms live in `kgeir-core`.
//!
//! * [`formats`]: interaction log and Q-matrix CSV, skill vocabulary, graph JSON,
//! * [`config`]: `key=value` run configuration,
//! * [`checkpoint`]: named-parameter CSV bundles with a manifest,
//! * [`export`]: importance, embedding, EMC, audit, trace and plot-data files,
//! * [`run`]: the operations behind each subcommand.

pub mod checkpoint;
pub mod config;
mod error;
pub mod export;
pub mod formats;
pub mod run;

pub use error::{Error, Result};
pub use kgeir_core as core;
