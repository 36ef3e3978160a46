//! Token-level sanitization under metric differential privacy, and the
//! Bayesian reconstruction attacks used to measure how much of the original
//! text a sanitized corpus still reveals.

pub mod attack;
pub mod context;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod mechanism;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
