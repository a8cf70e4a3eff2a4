//! Training-dynamics laboratory for context copying in small decoder-only
//! transformers: synthetic corpora and copy benchmarks, a CPU training loop,
//! induction-head scoring and grokking detection.

pub mod analysis;
pub mod data;
pub mod error;
pub mod model;
pub mod numeric;
pub mod optim;
pub mod planted;
pub mod report;
pub mod sweep;
pub mod train;

pub use error::{Error, Result};
