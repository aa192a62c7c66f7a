//! Pipeline configuration and the two built-in presets.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::conditioning::{CullParams, CutoffParams};
use crate::error::{Error, Result};
use crate::extraction::DEFAULT_MAX_DEPTH;
use crate::source::{default_rate_profile, neighbour_crosstalk, ArrayConfig, DetectorModel, SimConfig, TdcProfile};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// One SPAD sampled by a clock.
    Randy,
    /// A SPAD array with per-pixel TDCs.
    Linospad,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExtractorKind {
    Peres,
    VonNeumann,
    ZhouBruck,
    Diff,
    Odeven,
}

impl ExtractorKind {
    pub fn name(self) -> &'static str {
        match self {
            ExtractorKind::Peres => "peres",
            ExtractorKind::VonNeumann => "von-neumann",
            ExtractorKind::ZhouBruck => "zhou-bruck",
            ExtractorKind::Diff => "diff",
            ExtractorKind::Odeven => "odeven",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditioningConfig {
    /// Fixed guard in samples; estimated from the gap histogram when absent.
    #[serde(default)]
    pub guard: Option<usize>,
    #[serde(default)]
    pub cutoff: CutoffParams,
    #[serde(default)]
    pub cull: CullParams,
}

/// Everything one pipeline run depends on. Times inside `detector` and the
/// `*_ticks` fields are in ticks of `sim.tick`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub mode: Mode,
    pub sim: SimConfig,
    pub detector: DetectorModel,
    #[serde(default)]
    pub array: Option<ArrayConfig>,
    /// Clock period of the single-detector sampler, ticks.
    pub sample_period: u64,
    #[serde(default)]
    pub conditioning: ConditioningConfig,
    pub extractor: ExtractorKind,
    #[serde(default = "default_max_depth")]
    pub max_depth: u32,
    /// Counting window of the parity protocol, ticks.
    pub odeven_tau: u64,
    #[serde(default = "default_max_lag")]
    pub max_lag: usize,
    /// Array coarse streams are extracted in blocks of this many samples.
    #[serde(default = "default_block")]
    pub extraction_block: usize,
}

fn default_max_depth() -> u32 {
    DEFAULT_MAX_DEPTH
}

fn default_max_lag() -> usize {
    100
}

fn default_block() -> usize {
    1 << 24
}

impl PipelineConfig {
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "randy" => Ok(Self::randy()),
            "linospad" => Ok(Self::linospad()),
            other => Err(Error::config(
                "preset",
                format!("unknown preset {other:?}; expected \"randy\" or \"linospad\""),
            )),
        }
    }

    /// A single SPAD at ≈200 kcounts/s, 1 ns resolution, sampled at 100 MHz.
    pub fn randy() -> Self {
        Self {
            mode: Mode::Randy,
            sim: SimConfig {
                photon_rate: 178_500.0,
                duration: 10.0,
                tick: 1e-9,
                seed: 1,
            },
            detector: DetectorModel {
                dead_time: 30,
                pulse_width: 5,
                afterpulse_prob: 0.116,
                afterpulse_window: 180,
                dark_rate: 100.0,
            },
            array: None,
            sample_period: 10,
            conditioning: ConditioningConfig::default(),
            extractor: ExtractorKind::Peres,
            max_depth: DEFAULT_MAX_DEPTH,
            odeven_tau: 50_000,
            max_lag: 100,
            extraction_block: default_block(),
        }
    }

    /// A 64-pixel bank with 2.5 ns clock and 140-code TDCs, 8000 frames of 320 µs.
    pub fn linospad() -> Self {
        const TAU_SUB: f64 = 2.5e-9 / 140.0;
        let n_pixels = 64;
        let mean_rate = 1.12e6;
        Self {
            mode: Mode::Linospad,
            sim: SimConfig {
                photon_rate: mean_rate,
                duration: 8000.0 * 320e-6,
                tick: TAU_SUB,
                seed: 1,
            },
            detector: DetectorModel {
                dead_time: 2240,
                pulse_width: 280,
                afterpulse_prob: 0.1,
                afterpulse_window: 11_200,
                dark_rate: 100.0,
            },
            array: Some(ArrayConfig {
                n_pixels,
                n_tdc: 64,
                frame_time: 320e-6,
                readout_time: 410e-6,
                clock_period: 2.5e-9,
                buffer_cap: 512,
                crosstalk_map: neighbour_crosstalk(n_pixels, 64, &[(1, 0.02), (2, 0.01)]),
                crosstalk_jitter: 70,
                per_pixel_rate: default_rate_profile(n_pixels, mean_rate),
                tdc_profile: TdcProfile::linospad_like(),
            }),
            sample_period: 140,
            conditioning: ConditioningConfig {
                guard: None,
                cutoff: CutoffParams {
                    fit_from: 200,
                    ..CutoffParams::default()
                },
                cull: CullParams::default(),
            },
            extractor: ExtractorKind::Peres,
            max_depth: DEFAULT_MAX_DEPTH,
            odeven_tau: 50_000,
            max_lag: 100,
            extraction_block: default_block(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.detector.validate()?;
        if self.sample_period == 0 {
            return Err(Error::config("sample_period", "must be at least one tick"));
        }
        if self.odeven_tau == 0 {
            return Err(Error::config("odeven_tau", "must be at least one tick"));
        }
        if self.max_depth == 0 {
            return Err(Error::config("max_depth", "must be at least 1"));
        }
        if self.max_lag == 0 {
            return Err(Error::config("max_lag", "must be at least 1"));
        }
        if self.extraction_block < 2 {
            return Err(Error::config("extraction_block", "must be at least 2 samples"));
        }
        let c = &self.conditioning;
        if !(c.cutoff.band.0 <= 1.0 && 1.0 <= c.cutoff.band.1) {
            return Err(Error::config("conditioning.cutoff.band", "must contain 1"));
        }
        if c.cutoff.stable_bins == 0 {
            return Err(Error::config("conditioning.cutoff.stable_bins", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&c.cull.threshold) {
            return Err(Error::config("conditioning.cull.threshold", "must lie in [0, 1)"));
        }
        let allowed: &[ExtractorKind] = match self.mode {
            Mode::Randy => {
                if self.array.is_some() {
                    return Err(Error::config("array", "only used in linospad mode; remove it"));
                }
                &[
                    ExtractorKind::Peres,
                    ExtractorKind::VonNeumann,
                    ExtractorKind::Diff,
                    ExtractorKind::Odeven,
                ]
            }
            Mode::Linospad => {
                let array = self
                    .array
                    .as_ref()
                    .ok_or_else(|| Error::config("array", "linospad mode needs an array section"))?;
                array.validate(&self.sim)?;
                &[
                    ExtractorKind::Peres,
                    ExtractorKind::VonNeumann,
                    ExtractorKind::ZhouBruck,
                ]
            }
        };
        if !allowed.contains(&self.extractor) {
            let names: Vec<&str> = allowed.iter().map(|e| e.name()).collect();
            return Err(Error::config(
                "extractor",
                format!(
                    "{} is not available in {:?} mode; choose one of {}",
                    self.extractor.name(),
                    self.mode,
                    names.join(", ")
                ),
            ));
        }
        Ok(())
    }
}
