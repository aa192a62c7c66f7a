//! Photon sources and detector non-idealities.
//!
//! Everything here is a pure function of its configuration and seed. Time is
//! integer ticks throughout; the tick length lives in [`SimConfig::tick`].

pub mod array;
mod detector;
pub mod tdc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use array::{
    default_rate_profile, neighbour_crosstalk, simulate_array, simulate_frame_events, simulate_frames, ArrayConfig,
    CrosstalkLink, Tag, TagFrame,
};
pub use detector::apply_detector;
pub use tdc::{TdcProfile, TDC_CODES};

/// Photon source and time base.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Mean photon arrival rate, events per second.
    pub photon_rate: f64,
    /// Simulated interval, seconds.
    pub duration: f64,
    /// Fundamental time resolution, seconds.
    pub tick: f64,
    pub seed: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.photon_rate > 0.0 && self.photon_rate.is_finite()) {
            return Err(Error::config(
                "sim.photon_rate",
                "must be a positive number of events/s",
            ));
        }
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return Err(Error::config(
                "sim.duration",
                "must be a non-negative number of seconds",
            ));
        }
        if !(self.tick > 0.0 && self.tick.is_finite()) {
            return Err(Error::config("sim.tick", "must be a positive number of seconds"));
        }
        if self.photon_rate * self.tick >= 1.0 {
            return Err(Error::config(
                "sim.photon_rate",
                format!(
                    "photon_rate × tick = {} saturates the time base (must be < 1)",
                    self.photon_rate * self.tick
                ),
            ));
        }
        Ok(())
    }

    /// Length of the simulated interval in ticks.
    pub fn duration_ticks(&self) -> u64 {
        ticks_for(self.duration, self.tick)
    }
}

/// Converts seconds to a whole number of ticks, rounding to nearest.
pub fn ticks_for(seconds: f64, tick: f64) -> u64 {
    (seconds / tick).round() as u64
}

/// SPAD behaviour, all times in ticks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    /// Minimum separation of two accepted detections.
    pub dead_time: u64,
    /// How long the output stays high after a detection.
    pub pulse_width: u64,
    /// Probability that an accepted avalanche triggers an afterpulse.
    pub afterpulse_prob: f64,
    /// Afterpulses land uniformly in `(dead_time, afterpulse_window]` after their parent.
    pub afterpulse_window: u64,
    /// Dark count rate, events per second.
    pub dark_rate: f64,
}

impl DetectorModel {
    /// A detector that passes every event through unchanged.
    pub fn ideal() -> Self {
        Self {
            dead_time: 1,
            pulse_width: 0,
            afterpulse_prob: 0.0,
            afterpulse_window: 1,
            dark_rate: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.pulse_width >= self.dead_time {
            return Err(Error::config(
                "detector.pulse_width",
                format!(
                    "must be shorter than dead_time ({} ≥ {})",
                    self.pulse_width, self.dead_time
                ),
            ));
        }
        if self.afterpulse_window < self.dead_time {
            return Err(Error::config(
                "detector.afterpulse_window",
                format!("must be ≥ dead_time ({} < {})", self.afterpulse_window, self.dead_time),
            ));
        }
        if !(0.0..1.0).contains(&self.afterpulse_prob) {
            return Err(Error::config("detector.afterpulse_prob", "must lie in [0, 1)"));
        }
        if self.afterpulse_prob > 0.0 && self.afterpulse_window == self.dead_time {
            return Err(Error::config(
                "detector.afterpulse_window",
                "must exceed dead_time when afterpulse_prob > 0",
            ));
        }
        if !(self.dark_rate >= 0.0 && self.dark_rate.is_finite()) {
            return Err(Error::config("detector.dark_rate", "must be a non-negative rate"));
        }
        Ok(())
    }
}

/// Ground-truth origin of a detection, kept for oracle tests.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventLabel {
    /// A photon or dark count.
    True,
    Afterpulse,
    Crosstalk,
}

impl EventLabel {
    pub fn code(self) -> u8 {
        match self {
            EventLabel::True => 0,
            EventLabel::Afterpulse => 1,
            EventLabel::Crosstalk => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(EventLabel::True),
            1 => Some(EventLabel::Afterpulse),
            2 => Some(EventLabel::Crosstalk),
            _ => None,
        }
    }
}

/// Strictly increasing detection timestamps over `[0, span)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhotonEventStream {
    pub events: Vec<u64>,
    /// Tick length in seconds.
    pub tick: f64,
    /// Observation window length in ticks.
    pub span: u64,
    pub labels: Option<Vec<EventLabel>>,
}

impl PhotonEventStream {
    pub fn new(events: Vec<u64>, tick: f64, span: u64) -> Result<Self> {
        let s = Self {
            events,
            tick,
            span,
            labels: None,
        };
        s.check()?;
        Ok(s)
    }

    pub fn empty(tick: f64, span: u64) -> Self {
        Self {
            events: Vec::new(),
            tick,
            span,
            labels: None,
        }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Observation window in seconds.
    pub fn duration(&self) -> f64 {
        self.span as f64 * self.tick
    }

    /// Detections per second over the observation window.
    pub fn count_rate(&self) -> f64 {
        if self.span == 0 {
            0.0
        } else {
            self.events.len() as f64 / self.duration()
        }
    }

    pub fn check(&self) -> Result<()> {
        if let Some(w) = self.events.windows(2).position(|w| w[0] >= w[1]) {
            return Err(Error::Malformed(format!(
                "event timestamps not strictly increasing at index {}",
                w + 1
            )));
        }
        if let Some(&last) = self.events.last() {
            if last >= self.span {
                return Err(Error::Malformed(format!(
                    "event at tick {last} lies outside the {}-tick window",
                    self.span
                )));
            }
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.events.len() {
                return Err(Error::Malformed(format!(
                    "{} labels for {} events",
                    labels.len(),
                    self.events.len()
                )));
            }
        }
        Ok(())
    }
}

/// Poisson arrivals at `cfg.photon_rate`, quantised to ticks.
///
/// A tick holds at most one event; the per-tick occupancy is Bernoulli with
/// `p = 1 − exp(−rate·tick)`, so gaps are geometric (the quantised
/// exponential) with mean `1/p ≈ 1/(rate·tick)`.
pub fn gen_poisson_arrivals(cfg: &SimConfig) -> Result<PhotonEventStream> {
    cfg.validate()?;
    let span = cfg.duration_ticks();
    let mut rng = derive_rng(cfg.seed, Domain::Photons, 0, 0);
    let events = poisson_ticks(cfg.photon_rate * cfg.tick, span, &mut rng);
    Ok(PhotonEventStream {
        events,
        tick: cfg.tick,
        span,
        labels: None,
    })
}

/// Poisson process with `rate_per_tick` expected events per tick over `[0, span)`.
pub(crate) fn poisson_ticks(rate_per_tick: f64, span: u64, rng: &mut ChaCha8Rng) -> Vec<u64> {
    if span == 0 || rate_per_tick <= 0.0 {
        return Vec::new();
    }
    let exp = Exp::new(rate_per_tick).expect("positive rate");
    let mut events = Vec::with_capacity((rate_per_tick * span as f64 * 1.01) as usize + 16);
    let mut t = exp.sample(rng).floor();
    let limit = span as f64;
    while t < limit {
        events.push(t as u64);
        t += exp.sample(rng).floor() + 1.0;
    }
    events
}

/// Independent random streams are keyed by domain plus up to two indices.
#[derive(Clone, Copy, Debug)]
#[repr(u64)]
pub(crate) enum Domain {
    Photons = 1,
    Dark = 2,
    Afterpulse = 3,
    Crosstalk = 4,
    Phase = 5,
}

pub(crate) fn derive_rng(seed: u64, domain: Domain, a: u64, b: u64) -> ChaCha8Rng {
    let mut h = splitmix64(seed ^ 0x5152_4e47_5345_4544);
    h = splitmix64(h ^ domain as u64);
    h = splitmix64(h ^ a);
    h = splitmix64(h ^ b.rotate_left(32));
    ChaCha8Rng::seed_from_u64(h)
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(rate: f64, duration: f64, tick: f64, seed: u64) -> SimConfig {
        SimConfig {
            photon_rate: rate,
            duration,
            tick,
            seed,
        }
    }

    #[test]
    fn zero_duration_is_empty() {
        let s = gen_poisson_arrivals(&cfg(1e5, 0.0, 1e-9, 1)).unwrap();
        assert!(s.is_empty());
        assert_eq!(s.span, 0);
    }

    #[test]
    fn saturated_time_base_is_rejected() {
        let err = gen_poisson_arrivals(&cfg(1e9, 1.0, 1e-9, 1)).unwrap_err();
        assert!(err.to_string().contains("sim.photon_rate"), "{err}");
        assert!(gen_poisson_arrivals(&cfg(-1.0, 1.0, 1e-9, 1)).is_err());
        assert!(gen_poisson_arrivals(&cfg(1.0, 1.0, 0.0, 1)).is_err());
    }

    #[test]
    fn count_within_four_sigma_and_replayable() {
        // N ~ Poisson(1e6): σ = 1000.
        let c = cfg(1e5, 10.0, 1e-9, 77);
        let a = gen_poisson_arrivals(&c).unwrap();
        assert!((a.len() as f64 - 1e6).abs() < 4000.0, "count {}", a.len());
        let b = gen_poisson_arrivals(&c).unwrap();
        assert_eq!(a, b);
        a.check().unwrap();
        let other = gen_poisson_arrivals(&cfg(1e5, 10.0, 1e-9, 78)).unwrap();
        assert_ne!(a.events, other.events);
    }

    #[test]
    fn mean_interarrival_at_200_kcps_is_5_us() {
        let s = gen_poisson_arrivals(&cfg(2e5, 5.0, 1e-9, 3)).unwrap();
        let n = s.len() - 1;
        let mean_ticks = (s.events[n] - s.events[0]) as f64 / n as f64;
        let mean_s = mean_ticks * 1e-9;
        // Standard error of the mean of ~1e6 exponential gaps is 5 µs/1000.
        assert!((mean_s - 5e-6).abs() < 4.0 * 5e-9, "mean {mean_s}");
    }

    #[test]
    fn detector_model_validation_names_the_field() {
        let mut m = DetectorModel {
            dead_time: 30,
            pulse_width: 5,
            afterpulse_prob: 0.1,
            afterpulse_window: 180,
            dark_rate: 0.0,
        };
        m.validate().unwrap();
        m.pulse_width = 30;
        assert!(m
            .validate()
            .unwrap_err()
            .to_string()
            .starts_with("detector.pulse_width"));
        m.pulse_width = 5;
        m.afterpulse_window = 20;
        assert!(m
            .validate()
            .unwrap_err()
            .to_string()
            .starts_with("detector.afterpulse_window"));
        m.afterpulse_window = 180;
        m.afterpulse_prob = 1.0;
        assert!(m
            .validate()
            .unwrap_err()
            .to_string()
            .starts_with("detector.afterpulse_prob"));
    }

    #[test]
    fn stream_check_catches_disorder() {
        assert!(PhotonEventStream::new(vec![1, 1], 1.0, 10).is_err());
        assert!(PhotonEventStream::new(vec![3, 2], 1.0, 10).is_err());
        assert!(PhotonEventStream::new(vec![3, 10], 1.0, 10).is_err());
        assert!(PhotonEventStream::new(vec![0, 9], 1.0, 10).is_ok());
    }
}
