//! Identity regression space (IRS) embeddings for person re-identification.
//!
//! Samples are ridge-regressed onto identity-coded target vectors, giving a
//! linear (or kernelised) projection in which cross-camera matching is plain
//! Euclidean nearest-neighbour search. The model can be updated exactly as
//! labels stream in, and an active-labeling loop picks which probe a human
//! should verify next.
//!
//! Module map:
//!
//! - [`dataset`]: feature matrices, manifests, splits and a synthetic generator
//! - [`coding`]: OneHot, FDA and Random target codings
//! - [`regression`]: batch closed-form fits, kernels, embedding, FDA oracle
//! - [`incremental`]: Woodbury updates of a running model
//! - [`active`]: selection criteria and the labeling session loop
//! - [`evaluation`]: ranking, CMC, mAP, fusion and experiment protocols
//! - [`service`]: CLI plumbing and the HTTP annotation service

pub mod active;
pub mod coding;
pub mod dataset;
mod error;
pub mod evaluation;
pub mod incremental;
pub mod linalg;
pub mod regression;
pub mod service;
pub mod storage;

pub use error::{IrsError, Result};

/// Regularisation strength used when none is given.
pub const DEFAULT_LAMBDA: f64 = 0.1;
