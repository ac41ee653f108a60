//! Minimum-process non-blocking coordinated checkpointing for mobile
//! distributed systems, with a deterministic simulator and an independent
//! trace verifier.

pub mod error;
pub mod metrics;
pub mod mss;
pub mod protocol;
pub mod scenario;
pub mod simnet;
pub mod types;
pub mod verifier;

pub use error::{Error, Result};
