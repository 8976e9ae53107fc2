//! Overload fault detection toolkit for DC servo motors.
//!
//! The pipeline: simulate or ingest output-current traces ([`signal`]),
//! encode 1024-sample windows into 3x32x32 images ([`transform`]), build
//! labeled datasets ([`dataset`]), train the compact residual classifier
//! ([`tensornet`], [`trainer`]), then run it either in-process against a
//! live sample stream ([`detector`]) or behind a framed serial protocol
//! ([`wire`]). [`dualmotor`] simulates the redundant drive that acts on a
//! detection and quantifies its energy saving.

pub mod dataset;
pub mod detector;
pub mod dualmotor;
pub mod signal;
pub mod tensornet;
pub mod trainer;
pub mod transform;
pub mod wire;
