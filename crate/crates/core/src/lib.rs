//! Core algorithms for knowledge-graph guided adaptive exercise selection.
//!
//! The crate is `no_std` (with `alloc`) and contains no IO. It covers:
//!
//! * [`data`]: interaction logs, Q-matrices and holdout splits,
//! * [`graph`]: the typed multi-level knowledge graph and learning-path extraction,
//! * [`importance`]: skill features and the skill importance weight,
//! * [`embeddings`]: relation matrices, GCN propagation and relation-aware attention,
//! * [`autodiff`] and [`cdm`]: a small reverse-mode tape and the IRT / MIRT / NACD
//!   diagnosis models built on it,
//! * [`informativeness`] and [`representativeness`]: the two selection stages,
//! * [`harness`]: replay sessions, strategies and metrics,
//! * [`synth`]: a DINA-style synthetic population used for desk-scale evaluation.
//!
//! File formats, exports and the command line live in the companion `kgeir` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod cdm;
pub mod data;
pub mod embeddings;
mod error;
pub mod graph;
pub mod harness;
pub mod importance;
pub mod informativeness;
pub mod matrix;
pub mod math;
pub mod metrics;
pub mod representativeness;
pub mod synth;

pub use error::{Error, Result};
pub use matrix::Matrix;
