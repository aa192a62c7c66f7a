//! Time-to-digital converter code distribution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Output codes per 2.5 ns clock cycle.
pub const TDC_CODES: usize = 140;

/// Probability that a uniformly timed arrival lands in each fine code.
///
/// Bin widths are the differential non-linearity of the delay line: the
/// code for an arrival at cycle phase `φ ∈ [0, 1)` is the bin whose
/// cumulative-weight interval contains `φ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TdcProfileRepr", into = "TdcProfileRepr")]
pub struct TdcProfile {
    bin_weights: Vec<f64>,
    cumulative: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct TdcProfileRepr {
    bin_weights: Vec<f64>,
    #[serde(default, skip_deserializing)]
    missing_codes: Vec<u8>,
}

impl TryFrom<TdcProfileRepr> for TdcProfile {
    type Error = Error;

    fn try_from(repr: TdcProfileRepr) -> Result<Self> {
        TdcProfile::new(repr.bin_weights)
    }
}

impl From<TdcProfile> for TdcProfileRepr {
    fn from(p: TdcProfile) -> Self {
        TdcProfileRepr {
            missing_codes: p.missing_codes(),
            bin_weights: p.bin_weights,
        }
    }
}

impl TdcProfile {
    /// Weights must number exactly [`TDC_CODES`], be non-negative and sum to 1 ± 1e-12.
    pub fn new(bin_weights: Vec<f64>) -> Result<Self> {
        if bin_weights.len() != TDC_CODES {
            return Err(Error::config(
                "tdc_profile.bin_weights",
                format!("expected {TDC_CODES} weights, got {}", bin_weights.len()),
            ));
        }
        if let Some(k) = bin_weights.iter().position(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::config(
                "tdc_profile.bin_weights",
                format!("weight {k} is negative or not finite"),
            ));
        }
        let total: f64 = bin_weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::config(
                "tdc_profile.bin_weights",
                format!("weights sum to {total}, expected 1"),
            ));
        }
        let mut cumulative = Vec::with_capacity(TDC_CODES + 1);
        let mut acc = 0.0;
        cumulative.push(0.0);
        for w in &bin_weights {
            acc += w;
            cumulative.push(acc);
        }
        Ok(Self {
            bin_weights,
            cumulative,
        })
    }

    /// Normalises arbitrary non-negative weights.
    pub fn from_unnormalized(weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::config(
                "tdc_profile.bin_weights",
                "weights must have a positive sum",
            ));
        }
        let mut normalized: Vec<f64> = weights.iter().map(|w| w / total).collect();
        // Push the rounding residue into the largest bin so the sum is 1 to the ulp.
        let residue = 1.0 - normalized.iter().sum::<f64>();
        if let Some(max) = normalized.iter_mut().max_by(|a, b| a.partial_cmp(b).expect("finite")) {
            *max += residue;
        }
        Self::new(normalized)
    }

    pub fn uniform() -> Self {
        Self::from_unnormalized(vec![1.0; TDC_CODES]).expect("uniform profile is valid")
    }

    /// A delay-line profile with the features seen on FPGA TDCs: the first
    /// six codes never fire, the 35 four-tap carry elements alternate wide
    /// and narrow taps, a slow ripple runs across the line and three taps are
    /// markedly over-wide. Its entropy is 6.80 bits against log2(140) = 7.13.
    pub fn linospad_like() -> Self {
        const TAP_PATTERN: [f64; 4] = [1.6, 0.64, 1.18, 0.58];
        const WIDE_TAPS: [(usize, f64); 3] = [(37, 2.6), (71, 2.2), (104, 2.4)];
        const MISSING: usize = 6;
        let mut w: Vec<f64> = (0..TDC_CODES)
            .map(|k| {
                let ripple = 1.0 + 0.5 * (2.0 * std::f64::consts::PI * k as f64 / 35.0).cos();
                TAP_PATTERN[k % 4] * ripple
            })
            .collect();
        for (code, factor) in WIDE_TAPS {
            w[code] *= factor;
        }
        w[..MISSING].iter_mut().for_each(|x| *x = 0.0);
        Self::from_unnormalized(w).expect("built-in profile is valid")
    }

    pub fn bin_weights(&self) -> &[f64] {
        &self.bin_weights
    }

    /// Codes with zero weight.
    pub fn missing_codes(&self) -> Vec<u8> {
        self.bin_weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w == 0.0)
            .map(|(k, _)| k as u8)
            .collect()
    }

    /// Shannon entropy of the code distribution, in bits.
    pub fn entropy(&self) -> f64 {
        self.bin_weights
            .iter()
            .filter(|p| **p > 0.0)
            .map(|p| -p * p.log2())
            .sum()
    }

    /// Fine code for an arrival at cycle phase `phase ∈ [0, 1)`.
    pub fn code_for_phase(&self, phase: f64) -> u8 {
        // First bin whose upper edge lies above the phase; zero-width bins are skipped.
        let idx = self.cumulative[1..].partition_point(|&edge| edge <= phase);
        idx.min(TDC_CODES - 1) as u8
    }
}
