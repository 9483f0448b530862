//! Situation-aware video streaming simulator.
//!
//! The pipeline annotates frames that contain a described vehicle, lifts
//! the annotation to GOPs, requests a per-GOP SNR from the radio network,
//! accounts the noise-normalized transmit power against an un-annotated
//! baseline, and emulates the QPSK/AWGN uplink with seeded bit errors.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod annotate;
pub mod channel;
pub mod detection;
pub mod error;
pub mod orchestrate;
pub mod pipeline;
pub mod synth;
pub mod video;

pub use error::{Error, Result};
