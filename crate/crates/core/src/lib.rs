//! Finite-population mean estimation from non-probability samples.

pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod frames;
pub mod linalg;
pub mod rng;
pub mod samplers;
pub mod simlab;
pub mod stats;
pub mod trees;
pub mod weighting;

pub use error::{Error, Result};
