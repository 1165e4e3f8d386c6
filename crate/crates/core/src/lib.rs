//! Prompt-perturbation privacy lab: protection mechanisms, reconstruction
//! attacks, leakage/utility measurement and certification of the
//! privacy–utility lower bound on constructed instances.

pub mod attack;
pub mod distributions;
pub mod embedding;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod protection;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
