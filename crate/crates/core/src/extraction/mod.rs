//! Randomness extractors and the two counting protocols they are compared with.

mod kernel;
mod peres;
mod protocols;
mod zhou_bruck;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use peres::{peres, von_neumann, DEFAULT_MAX_DEPTH};
pub use protocols::{protocol_diff, protocol_odeven};
pub use zhou_bruck::{prefix_sequences, symbol_bits, zhou_bruck};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractorStats {
    pub input_len: u64,
    pub output_len: u64,
    pub depth_reached: u32,
    /// Output bits contributed by the top-level von Neumann step.
    pub n_bits: u64,
    /// Output bits from the XOR subtree.
    pub u_bits: u64,
    /// Output bits from the equal-pair subtree.
    pub v_bits: u64,
}

impl ExtractorStats {
    /// Output bits per input element.
    pub fn yield_ratio(&self) -> f64 {
        if self.input_len == 0 {
            0.0
        } else {
            self.output_len as f64 / self.input_len as f64
        }
    }

    /// Adds another extraction's counts; depth keeps the maximum.
    pub fn absorb(&mut self, other: &ExtractorStats) {
        self.input_len += other.input_len;
        self.output_len += other.output_len;
        self.depth_reached = self.depth_reached.max(other.depth_reached);
        self.n_bits += other.n_bits;
        self.u_bits += other.u_bits;
        self.v_bits += other.v_bits;
    }
}

/// Integers drawn from `0..alphabet_size`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SymbolStream {
    symbols: Vec<u32>,
    alphabet_size: u32,
}

impl SymbolStream {
    pub fn new(symbols: Vec<u32>, alphabet_size: u32) -> Result<Self> {
        if alphabet_size < 2 {
            return Err(Error::InvalidArgument(format!(
                "alphabet size must be at least 2, got {alphabet_size}"
            )));
        }
        if let Some((i, s)) = symbols.iter().enumerate().find(|(_, s)| **s >= alphabet_size) {
            return Err(Error::InvalidArgument(format!(
                "symbol {s} at index {i} is outside the alphabet 0..{alphabet_size}"
            )));
        }
        Ok(Self { symbols, alphabet_size })
    }

    /// TDC codes as symbols over `0..alphabet_size`.
    pub fn from_codes(codes: &[u8], alphabet_size: u32) -> Result<Self> {
        Self::new(codes.iter().map(|&c| c as u32).collect(), alphabet_size)
    }

    pub fn symbols(&self) -> &[u32] {
        &self.symbols
    }

    pub fn alphabet_size(&self) -> u32 {
        self.alphabet_size
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }
}
