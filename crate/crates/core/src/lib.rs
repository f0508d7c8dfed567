//! Receiver-agnostic transmitter fingerprinting.
//!
//! The crate covers the whole two-stage workflow: synthetic RF impairment
//! generation ([`signal`]), preamble detection / CFO / MMSE equalization
//! ([`preprocess`]), a small reverse-mode network substrate ([`nn`]), the
//! training objectives ([`losses`]), lab calibration of a feature extractor and
//! field classifier training ([`training`]), closed/open-set decision rules
//! ([`classifiers`]), the evaluation protocol ([`eval`]) and persistence
//! ([`store`]).

pub mod classifiers;
pub mod config;
pub mod error;
pub mod eval;
pub mod losses;
pub mod nn;
pub mod preprocess;
pub mod rng;
pub mod signal;
pub mod store;
pub mod training;

pub use error::{Error, Result};
