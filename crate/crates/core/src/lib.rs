//! Streaming input-uncertainty quantification with two-layer importance sampling.

pub mod algorithms;
pub mod efd;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod models;
pub mod rng;
pub mod streaming;
pub mod verify;

pub use error::{Result, UqError};
