//! Random bits from photon arrival times.
//!
//! The crate simulates single-photon detectors (one SPAD sampled by a clock,
//! or a SPAD array with per-pixel time-to-digital converters), removes the
//! correlations the detectors introduce and distils unbiased bits with the
//! von Neumann, Peres and Zhou-Bruck extractors. [`analysis`] holds the
//! statistics used to size and validate each generator.

pub mod analysis;
pub mod bits;
pub mod conditioning;
pub mod config;
pub mod error;
pub mod extraction;
pub mod io;
pub mod pipeline;
pub mod sampling;
pub mod source;

pub use bits::BitBuf;
pub use error::{Error, Result};
