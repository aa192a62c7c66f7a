//! Clock sampling of detector output.

use serde::{Deserialize, Serialize};

use crate::bits::BitBuf;
use crate::error::{Error, Result};
use crate::source::{PhotonEventStream, TagFrame};

/// A clock-sampled detector signal: bit `j` covers ticks `[j·T, (j+1)·T)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledBitStream {
    pub bits: BitBuf,
    /// Clock period in ticks.
    pub sample_period: u64,
    /// Tick length of the source stream, seconds.
    pub tick: f64,
}

impl SampledBitStream {
    /// Clock period in seconds.
    pub fn period_seconds(&self) -> f64 {
        self.sample_period as f64 * self.tick
    }

    pub fn sample_rate(&self) -> f64 {
        1.0 / self.period_seconds()
    }
}

/// Samples the detector output with a clock of `sample_period` ticks.
///
/// The sampler latches rising edges: bit `j` is 1 when the signal went high
/// somewhere in `[j·T, (j+1)·T)`, i.e. it reads high at the clock edge
/// `(j+1)·T` after reading low at `j·T`. A pulse holds the line high for
/// `pulse_width` ticks; an event raises a new edge only if the line was low
/// in the tick before it. The stream has `floor(span / T)` bits.
pub fn sample_events(events: &PhotonEventStream, sample_period: u64, pulse_width: u64) -> Result<SampledBitStream> {
    if sample_period == 0 {
        return Err(Error::config("sample_period", "must be at least one tick"));
    }
    if pulse_width == 0 {
        return Err(Error::config("pulse_width", "must be at least one tick"));
    }
    if pulse_width >= sample_period {
        log::warn!("pulse_width {pulse_width} ≥ sample_period {sample_period}: a pulse can hide the next detection");
    }
    events.check()?;
    let len = (events.span / sample_period) as usize;
    let mut bits = BitBuf::zeros(len);
    let mut high_until: Option<u64> = None;
    for &t in &events.events {
        let rising = high_until.is_none_or(|end| t > end);
        high_until = Some(high_until.map_or(t + pulse_width, |end| end.max(t + pulse_width)));
        if rising {
            let j = (t / sample_period) as usize;
            if j < len {
                bits.set(j, true);
            }
        }
    }
    Ok(SampledBitStream {
        bits,
        sample_period,
        tick: events.tick,
    })
}

/// One pixel's frames split into clock-cycle bits and TDC codes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PixelView {
    /// One bit per clock cycle, frames concatenated.
    pub coarse: BitBuf,
    /// TDC codes in arrival order.
    pub fine: Vec<u8>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CoarseFineView {
    pub pixels: Vec<PixelView>,
    pub cycles_per_frame: u64,
    pub n_frames: usize,
}

/// Splits tag frames into a coarse bit stream and a fine-code sequence per
/// pixel. Frames are concatenated in the order given.
pub fn split_coarse_fine(frames: &[TagFrame], cycles_per_frame: u64) -> Result<CoarseFineView> {
    let n_pixels = frames.first().map_or(0, |f| f.pixels.len());
    let total = cycles_per_frame as usize * frames.len();
    let mut pixels: Vec<PixelView> = (0..n_pixels)
        .map(|_| PixelView {
            coarse: BitBuf::zeros(total),
            fine: Vec::new(),
        })
        .collect();
    for (k, frame) in frames.iter().enumerate() {
        if frame.pixels.len() != n_pixels {
            return Err(Error::Malformed(format!(
                "frame {} has {} pixels, expected {n_pixels}",
                frame.frame_index,
                frame.pixels.len()
            )));
        }
        let base = k * cycles_per_frame as usize;
        for (p, tags) in frame.pixels.iter().enumerate() {
            let view = &mut pixels[p];
            let mut prev: Option<u32> = None;
            for tag in tags {
                if tag.coarse as u64 >= cycles_per_frame {
                    return Err(Error::Malformed(format!(
                        "frame {} pixel {p}: coarse index {} beyond {cycles_per_frame} cycles",
                        frame.frame_index, tag.coarse
                    )));
                }
                if prev.is_some_and(|c| tag.coarse <= c) {
                    return Err(Error::Malformed(format!(
                        "frame {} pixel {p}: two tags in or out of order at cycle {}",
                        frame.frame_index, tag.coarse
                    )));
                }
                prev = Some(tag.coarse);
                view.coarse.set(base + tag.coarse as usize, true);
                view.fine.push(tag.fine);
            }
        }
    }
    Ok(CoarseFineView {
        pixels,
        cycles_per_frame,
        n_frames: frames.len(),
    })
}

/// Summary of a sampled stream for manifests.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SamplingSummary {
    pub n_bits: usize,
    pub n_ones: usize,
    pub sample_rate_hz: f64,
}

impl From<&SampledBitStream> for SamplingSummary {
    fn from(s: &SampledBitStream) -> Self {
        Self {
            n_bits: s.bits.len(),
            n_ones: s.bits.count_ones(),
            sample_rate_hz: s.sample_rate(),
        }
    }
}
