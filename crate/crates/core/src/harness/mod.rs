//! Experiment plumbing: configuration, the client/server protocol, sweeps,
//! bound verification and result export.

pub mod config;
pub mod experiment;
pub mod export;
pub mod protocol;
pub mod sweep;
pub mod verify;

pub use config::ExperimentConfig;
pub use experiment::Experiment;
pub use protocol::{run_protocol, MockLLM};
pub use sweep::sweep;
pub use verify::{verify_nfl, VerifyReport};
