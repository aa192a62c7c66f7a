//! Multi-pixel SPAD array read out in fixed-length frames.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::detector::detect;
use super::tdc::{TdcProfile, TDC_CODES};
use super::{derive_rng, poisson_ticks, DetectorModel, Domain, EventLabel, PhotonEventStream, SimConfig};
use crate::error::{Error, Result};

/// Directed crosstalk: a detection in the owning pixel fires `neighbor`
/// with this probability.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrosstalkLink {
    pub neighbor: usize,
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayConfig {
    pub n_pixels: usize,
    /// Pixels sharing one TDC bank; `n_pixels / n_tdc` banks in total.
    pub n_tdc: usize,
    /// Integration window, seconds.
    pub frame_time: f64,
    /// Dead interval between frames while the buffers are read out, seconds.
    pub readout_time: f64,
    /// Coarse clock period, seconds. Must equal [`TDC_CODES`] ticks.
    pub clock_period: f64,
    /// Maximum tags a pixel stores per frame.
    pub buffer_cap: usize,
    /// Outgoing links per source pixel.
    pub crosstalk_map: Vec<Vec<CrosstalkLink>>,
    /// Injected events are displaced by up to ± this many ticks.
    pub crosstalk_jitter: u64,
    /// Photon rate per pixel, events/s. Empty means `sim.photon_rate` everywhere.
    pub per_pixel_rate: Vec<f64>,
    pub tdc_profile: TdcProfile,
}

/// One detection as the readout reports it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Tag {
    /// Clock cycle within the frame.
    pub coarse: u32,
    /// TDC code, `0..140`.
    pub fine: u8,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TagFrame {
    pub frame_index: u64,
    /// Tags per pixel in arrival order.
    pub pixels: Vec<Vec<Tag>>,
    /// Pixels whose buffer filled; ascending.
    pub saturated: Vec<usize>,
}

impl TagFrame {
    pub fn n_tags(&self) -> usize {
        self.pixels.iter().map(Vec::len).sum()
    }
}

/// Longest interval the 28-bit timestamp counter can span, in ticks.
pub const MAX_FRAME_TICKS: u64 = 1 << 28;

impl ArrayConfig {
    pub fn validate(&self, sim: &SimConfig) -> Result<()> {
        sim.validate()?;
        if self.n_pixels == 0 {
            return Err(Error::config("array.n_pixels", "must be positive"));
        }
        if self.n_tdc == 0 || !self.n_pixels.is_multiple_of(self.n_tdc) {
            return Err(Error::config(
                "array.n_tdc",
                format!("must be positive and divide n_pixels = {}", self.n_pixels),
            ));
        }
        let codes = self.clock_period / sim.tick;
        let off = (codes - TDC_CODES as f64).abs();
        if off.is_nan() || off >= 1e-6 {
            return Err(Error::config(
                "sim.tick",
                format!("clock_period / tick = {codes}, the TDC needs exactly {TDC_CODES} ticks per cycle"),
            ));
        }
        if !(self.frame_time > 0.0 && self.frame_time.is_finite()) {
            return Err(Error::config(
                "array.frame_time",
                "must be a positive number of seconds",
            ));
        }
        if self.frame_ticks(sim.tick) > MAX_FRAME_TICKS {
            return Err(Error::config(
                "array.frame_time",
                format!(
                    "{} s exceeds the counter range of {:.3e} s",
                    self.frame_time,
                    MAX_FRAME_TICKS as f64 * sim.tick
                ),
            ));
        }
        if !(self.readout_time >= 0.0 && self.readout_time.is_finite()) {
            return Err(Error::config(
                "array.readout_time",
                "must be a non-negative number of seconds",
            ));
        }
        if self.buffer_cap == 0 || self.buffer_cap > u16::MAX as usize {
            return Err(Error::config("array.buffer_cap", "must lie in 1..=65535"));
        }
        if !self.per_pixel_rate.is_empty() {
            if self.per_pixel_rate.len() != self.n_pixels {
                return Err(Error::config(
                    "array.per_pixel_rate",
                    format!("{} entries for {} pixels", self.per_pixel_rate.len(), self.n_pixels),
                ));
            }
            if let Some(k) = self
                .per_pixel_rate
                .iter()
                .position(|r| !(r.is_finite() && *r >= 0.0 && r * sim.tick < 1.0))
            {
                return Err(Error::config(
                    format!("array.per_pixel_rate[{k}]"),
                    "must be a non-negative rate below 1/tick",
                ));
            }
        }
        if !self.crosstalk_map.is_empty() && self.crosstalk_map.len() != self.n_pixels {
            return Err(Error::config(
                "array.crosstalk_map",
                format!("{} entries for {} pixels", self.crosstalk_map.len(), self.n_pixels),
            ));
        }
        for (src, links) in self.crosstalk_map.iter().enumerate() {
            for (k, link) in links.iter().enumerate() {
                let field = || format!("array.crosstalk_map[{src}][{k}]");
                if link.neighbor >= self.n_pixels || link.neighbor == src {
                    return Err(Error::config(field(), "neighbor must be another pixel of the array"));
                }
                if !(0.0..=1.0).contains(&link.probability) {
                    return Err(Error::config(field(), "probability must lie in [0, 1]"));
                }
            }
        }
        Ok(())
    }

    pub fn frame_ticks(&self, tick: f64) -> u64 {
        super::ticks_for(self.frame_time, tick)
    }

    /// Coarse clock cycles per frame.
    pub fn cycles_per_frame(&self, tick: f64) -> u64 {
        self.frame_ticks(tick).div_ceil(TDC_CODES as u64)
    }

    /// Whole frames that fit in `sim.duration`.
    pub fn n_frames(&self, sim: &SimConfig) -> u64 {
        (sim.duration / self.frame_time * (1.0 + 1e-12)).floor() as u64
    }

    /// Wall-clock time one frame occupies, readout included.
    pub fn frame_period(&self) -> f64 {
        self.frame_time + self.readout_time
    }

    pub fn n_banks(&self) -> usize {
        self.n_pixels / self.n_tdc
    }

    pub fn bank_of(&self, pixel: usize) -> usize {
        pixel / self.n_tdc
    }

    pub fn pixel_rate(&self, sim: &SimConfig, pixel: usize) -> f64 {
        self.per_pixel_rate.get(pixel).copied().unwrap_or(sim.photon_rate)
    }
}

/// A per-pixel rate profile with mean `mean_rate`: efficiency falls linearly
/// across the array by ±5 % and four pixels sit 6 % above the trend.
pub fn default_rate_profile(n_pixels: usize, mean_rate: f64) -> Vec<f64> {
    let hot = [9, 23, 41, 55].map(|k| k * n_pixels / 64);
    let raw: Vec<f64> = (0..n_pixels)
        .map(|k| {
            let x = if n_pixels > 1 {
                k as f64 / (n_pixels - 1) as f64
            } else {
                0.5
            };
            let trend = 1.05 - 0.10 * x;
            if hot.contains(&k) {
                trend * 1.06
            } else {
                trend
            }
        })
        .collect();
    let mean = raw.iter().sum::<f64>() / n_pixels as f64;
    raw.into_iter().map(|r| r / mean * mean_rate).collect()
}

/// Symmetric nearest-neighbour crosstalk within each bank: pixel `k` fires
/// `k ± d` with probability `p` for every `(d, p)` in `by_distance`.
pub fn neighbour_crosstalk(n_pixels: usize, n_tdc: usize, by_distance: &[(usize, f64)]) -> Vec<Vec<CrosstalkLink>> {
    (0..n_pixels)
        .map(|k| {
            let bank = k / n_tdc;
            let mut links = Vec::new();
            for &(d, p) in by_distance {
                for n in [k.checked_sub(d), Some(k + d)].into_iter().flatten() {
                    if n < n_pixels && n / n_tdc == bank {
                        links.push(CrosstalkLink {
                            neighbor: n,
                            probability: p,
                        });
                    }
                }
            }
            links
        })
        .collect()
}

/// Simulates every frame that fits in `sim.duration`.
pub fn simulate_array(array: &ArrayConfig, sim: &SimConfig, detector: &DetectorModel) -> Result<Vec<TagFrame>> {
    simulate_frames(array, sim, detector, 0..array.n_frames(sim))
}

/// Simulates the frames with the given indices. Frame `k` is the same no
/// matter which range it was generated in.
pub fn simulate_frames(
    array: &ArrayConfig,
    sim: &SimConfig,
    detector: &DetectorModel,
    frames: std::ops::Range<u64>,
) -> Result<Vec<TagFrame>> {
    array.validate(sim)?;
    detector.validate()?;
    Ok(frames
        .into_par_iter()
        .map(|f| to_tags(array, sim.seed, f, &frame_events(array, sim, detector, f)))
        .collect())
}

/// Detected events of every pixel in frame `frame`, with truth labels,
/// before TDC quantisation and buffer truncation.
pub fn simulate_frame_events(
    array: &ArrayConfig,
    sim: &SimConfig,
    detector: &DetectorModel,
    frame: u64,
) -> Result<Vec<PhotonEventStream>> {
    array.validate(sim)?;
    detector.validate()?;
    Ok(frame_events(array, sim, detector, frame))
}

fn frame_events(array: &ArrayConfig, sim: &SimConfig, detector: &DetectorModel, frame: u64) -> Vec<PhotonEventStream> {
    let span = array.frame_ticks(sim.tick);
    let seed = sim.seed;
    let candidates: Vec<Vec<(u64, EventLabel)>> = (0..array.n_pixels)
        .map(|p| {
            let pix = p as u64;
            let mut rng = derive_rng(seed, Domain::Photons, pix, frame);
            let photons = poisson_ticks(array.pixel_rate(sim, p) * sim.tick, span, &mut rng);
            let mut rng = derive_rng(seed, Domain::Dark, pix, frame);
            let dark = poisson_ticks(detector.dark_rate * sim.tick, span, &mut rng);
            let mut all: Vec<(u64, EventLabel)> =
                photons.into_iter().chain(dark).map(|t| (t, EventLabel::True)).collect();
            all.sort_unstable_by_key(|e| e.0);
            all
        })
        .collect();
    let run = |p: usize, cands: &[(u64, EventLabel)]| {
        let mut rng = derive_rng(seed, Domain::Afterpulse, p as u64, frame);
        detect(cands, detector, span, &mut rng)
    };
    let mut detected: Vec<(Vec<u64>, Vec<EventLabel>)> =
        candidates.iter().enumerate().map(|(p, c)| run(p, c)).collect();

    if array.crosstalk_map.iter().any(|l| !l.is_empty()) {
        let mut injected: Vec<Vec<(u64, EventLabel)>> = vec![Vec::new(); array.n_pixels];
        let jitter = array.crosstalk_jitter;
        for (src, links) in array.crosstalk_map.iter().enumerate() {
            if links.is_empty() {
                continue;
            }
            let mut rng = derive_rng(seed, Domain::Crosstalk, src as u64, frame);
            for &t in &detected[src].0 {
                for link in links {
                    if rng.random::<f64>() < link.probability {
                        let shift = rng.random_range(0..=2 * jitter);
                        let at = (t + shift).saturating_sub(jitter).min(span - 1);
                        injected[link.neighbor].push((at, EventLabel::Crosstalk));
                    }
                }
            }
        }
        for (p, extra) in injected.into_iter().enumerate() {
            if extra.is_empty() {
                continue;
            }
            let mut merged = candidates[p].clone();
            merged.extend(extra);
            merged.sort_by_key(|e| e.0);
            detected[p] = run(p, &merged);
        }
    }

    detected
        .into_iter()
        .map(|(events, labels)| PhotonEventStream {
            events,
            tick: sim.tick,
            span,
            labels: Some(labels),
        })
        .collect()
}

fn to_tags(array: &ArrayConfig, seed: u64, frame: u64, events: &[PhotonEventStream]) -> TagFrame {
    let codes = TDC_CODES as u64;
    let mut saturated = Vec::new();
    let pixels = events
        .iter()
        .enumerate()
        .map(|(p, stream)| {
            if stream.events.len() > array.buffer_cap {
                saturated.push(p);
            }
            let mut rng = derive_rng(seed, Domain::Phase, p as u64, frame);
            stream
                .events
                .iter()
                .take(array.buffer_cap)
                .map(|&t| {
                    let phase = ((t % codes) as f64 + rng.random::<f64>()) / codes as f64;
                    Tag {
                        coarse: (t / codes) as u32,
                        fine: array.tdc_profile.code_for_phase(phase),
                    }
                })
                .collect()
        })
        .collect();
    TagFrame {
        frame_index: frame,
        pixels,
        saturated,
    }
}
