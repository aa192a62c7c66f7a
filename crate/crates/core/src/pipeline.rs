//! End-to-end chains: simulate, sample, condition, extract, analyse.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    aggregate_rates, empirical_entropy, extraction_efficiency, ks_geometric, serial_correlation, BitReport, KsReport,
    RateSummary,
};
use crate::bits::BitBuf;
use crate::conditioning::{
    estimate_cutoff, remove_guard, CoincidenceCounter, ConditioningReport, Cutoff, GuardRemover, InterarrivalHistogram,
};
use crate::config::{ExtractorKind, Mode, PipelineConfig};
use crate::error::{Error, Result};
use crate::extraction::{peres, protocol_diff, protocol_odeven, von_neumann, zhou_bruck, ExtractorStats, SymbolStream};
use crate::io;
use crate::sampling::sample_events;
use crate::source::{
    apply_detector, gen_poisson_arrivals, simulate_frames, ArrayConfig, PhotonEventStream, TagFrame, TDC_CODES,
};

/// One statistical gate of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, pass: bool, detail: String) -> Self {
        Self {
            name: name.into(),
            pass,
            detail,
        }
    }
}

/// Per-pixel results of an array run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PixelStats {
    pub pixel: usize,
    pub kept: bool,
    pub n_tags: u64,
    /// Plug-in entropy of the pixel's TDC codes, bits.
    pub code_entropy: f64,
    pub fine_bits: u64,
    /// Fine bits per tag over the code entropy.
    pub efficiency: f64,
    pub coarse_bits: u64,
}

/// Everything a run reports besides the bits themselves.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: Mode,
    pub extractor: ExtractorKind,
    pub seed: u64,
    /// Acquisition time the output was produced in, seconds.
    pub wall_time: f64,
    pub output_bits: u64,
    /// bit/s.
    pub output_rate: f64,
    /// Detections per second before conditioning, per pixel for arrays.
    pub observed_count_rate: f64,
    pub conditioning: Option<ConditioningReport>,
    pub ks: Option<KsReport>,
    pub extractor_stats: Option<ExtractorStats>,
    /// Serial correlation of the sampled stream before conditioning.
    pub raw_report: Option<BitReport>,
    pub report: BitReport,
    pub coarse_report: Option<BitReport>,
    pub fine_report: Option<BitReport>,
    pub rates: Option<RateSummary>,
    pub pixels: Vec<PixelStats>,
    pub checks: Vec<Check>,
}

impl RunSummary {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

pub struct PipelineRun {
    pub bits: BitBuf,
    /// Gap histogram (with fitted tail) the guard was chosen from.
    pub histogram: Option<InterarrivalHistogram>,
    pub summary: RunSummary,
}

/// Photon arrivals through the detector model.
pub fn simulate_events(cfg: &PipelineConfig) -> Result<PhotonEventStream> {
    let photons = gen_poisson_arrivals(&cfg.sim).map_err(|e| e.in_stage("simulate"))?;
    apply_detector(&photons, &cfg.detector, cfg.sim.seed).map_err(|e| e.in_stage("detector"))
}

/// Runs the configured chain on simulated data.
pub fn run(cfg: &PipelineConfig) -> Result<PipelineRun> {
    cfg.validate()?;
    match cfg.mode {
        Mode::Randy => run_randy_events(cfg, &simulate_events(cfg)?),
        Mode::Linospad => run_linospad(cfg, &SimulatedFrames::new(cfg)),
    }
}

/// Single-detector chain on a given detected stream.
pub fn run_randy_events(cfg: &PipelineConfig, detected: &PhotonEventStream) -> Result<PipelineRun> {
    cfg.validate()?;
    let duration = detected.duration();
    let observed = detected.count_rate();
    let max_lag = cfg.max_lag;
    let mut checks = Vec::new();
    let mut histogram = None;
    let mut conditioning = None;
    let mut ks = None;
    let mut stats = None;
    let mut raw_report = None;
    let bits = match cfg.extractor {
        ExtractorKind::Diff => protocol_diff(detected),
        ExtractorKind::Odeven => protocol_odeven(detected, cfg.odeven_tau).map_err(|e| e.in_stage("odeven"))?,
        _ => {
            let sampled = sample_events(detected, cfg.sample_period, cfg.detector.pulse_width)
                .map_err(|e| e.in_stage("sampling"))?;
            let raw = &sampled.bits;
            raw_report = serial_correlation(raw, max_lag).ok();
            let mut hist = InterarrivalHistogram::from_bits(raw).map_err(|e| e.in_stage("histogram"))?;
            let cutoff = estimate_cutoff(&mut hist, &cfg.conditioning.cutoff);
            let (guard, cutoff) = match (cfg.conditioning.guard, cutoff) {
                (Some(g), c) => (g, c.ok()),
                (None, Ok(c)) => (c.guard, Some(c)),
                (None, Err(e)) => return Err(e.in_stage("cutoff")),
            };
            let conditioned = remove_guard(raw, guard);
            let mut report = ConditioningReport {
                guard_cycles: guard,
                cutoff,
                ..Default::default()
            };
            report.add_stream(raw, &conditioned);
            report.effective_sample_rate = Some(report.samples_out as f64 / duration);
            let post = InterarrivalHistogram::from_bits(&conditioned).map_err(|e| e.in_stage("histogram"))?;
            let k = ks_geometric(&post, 1).map_err(|e| e.in_stage("ks"))?;
            checks.push(Check::new(
                "ks-exponential",
                k.pass,
                format!(
                    "D√n = {:.4} against {:.4}",
                    k.statistic * (k.n as f64).sqrt(),
                    crate::analysis::KS_CRITICAL_1PCT
                ),
            ));
            ks = Some(k);
            histogram = Some(hist);
            conditioning = Some(report);
            let (out, s) = match cfg.extractor {
                ExtractorKind::VonNeumann => {
                    let out = von_neumann(&conditioned);
                    let s = ExtractorStats {
                        input_len: conditioned.len() as u64,
                        output_len: out.len() as u64,
                        depth_reached: 1,
                        n_bits: out.len() as u64,
                        ..Default::default()
                    };
                    (out, s)
                }
                _ => peres(&conditioned, cfg.max_depth),
            };
            stats = Some(s);
            out
        }
    };
    let report = serial_correlation(&bits, max_lag).map_err(|e| e.in_stage("analysis"))?;
    push_report_checks(&mut checks, &report);
    let summary = RunSummary {
        mode: cfg.mode,
        extractor: cfg.extractor,
        seed: cfg.sim.seed,
        wall_time: duration,
        output_bits: bits.len() as u64,
        output_rate: if duration > 0.0 {
            bits.len() as f64 / duration
        } else {
            0.0
        },
        observed_count_rate: observed,
        conditioning,
        ks,
        extractor_stats: stats,
        raw_report,
        report,
        coarse_report: None,
        fine_report: None,
        rates: None,
        pixels: Vec::new(),
        checks,
    };
    Ok(PipelineRun {
        bits,
        histogram,
        summary,
    })
}

fn push_report_checks(checks: &mut Vec<Check>, report: &BitReport) {
    checks.push(Check::new(
        "serial-correlation",
        report.pass,
        if report.pass {
            format!("lags 1..{} within ±{:.3e}", report.lags.len(), report.family_band)
        } else {
            format!("lags outside ±{:.3e}: {:?}", report.family_band, report.failing_lags)
        },
    ));
    checks.push(Check::new(
        "bias",
        report.bias_ok,
        format!("|p1 − 1/2| = {:.3e}, limit {:.3e}", report.bias, report.bias_limit),
    ));
}

/// Anything that can hand out tag frames in order, possibly more than once.
pub trait FrameSource: Sync {
    /// Calls `f` with consecutive batches of frames.
    fn visit(&self, f: &mut dyn FnMut(&[TagFrame]) -> Result<()>) -> Result<()>;
}

/// Frames generated on demand from a configuration.
pub struct SimulatedFrames<'a> {
    cfg: &'a PipelineConfig,
    batch: u64,
}

impl<'a> SimulatedFrames<'a> {
    pub fn new(cfg: &'a PipelineConfig) -> Self {
        Self { cfg, batch: 64 }
    }
}

impl FrameSource for SimulatedFrames<'_> {
    fn visit(&self, f: &mut dyn FnMut(&[TagFrame]) -> Result<()>) -> Result<()> {
        let array = self
            .cfg
            .array
            .as_ref()
            .ok_or_else(|| Error::config("array", "missing"))?;
        let total = array.n_frames(&self.cfg.sim);
        let mut start = 0;
        while start < total {
            let end = (start + self.batch).min(total);
            let frames = simulate_frames(array, &self.cfg.sim, &self.cfg.detector, start..end)
                .map_err(|e| e.in_stage("simulate"))?;
            f(&frames)?;
            start = end;
        }
        Ok(())
    }
}

/// Frames read from a tag file.
pub struct TagFile {
    path: PathBuf,
}

impl TagFile {
    pub fn new(path: &Path) -> Self {
        Self { path: path.into() }
    }
}

impl FrameSource for TagFile {
    fn visit(&self, f: &mut dyn FnMut(&[TagFrame]) -> Result<()>) -> Result<()> {
        let mut reader = io::open_tags(&self.path)?;
        let mut batch = Vec::with_capacity(64);
        while let Some(frame) = reader.next_frame()? {
            batch.push(frame);
            if batch.len() == 64 {
                f(&batch)?;
                batch.clear();
            }
        }
        if !batch.is_empty() {
            f(&batch)?;
        }
        Ok(())
    }
}

struct CoarseState {
    remover: GuardRemover,
    pending: BitBuf,
    out: BitBuf,
    stats: ExtractorStats,
    events_out: u64,
}

/// Array chain: cull coupled pixels, condition and extract the kept
/// pixels' coarse streams, and extract every pixel's TDC codes.
pub fn run_linospad(cfg: &PipelineConfig, source: &dyn FrameSource) -> Result<PipelineRun> {
    cfg.validate()?;
    let array: &ArrayConfig = cfg.array.as_ref().expect("validated");
    let n_pixels = array.n_pixels;
    let cycles = array.cycles_per_frame(cfg.sim.tick);
    let frame_ticks = array.frame_ticks(cfg.sim.tick);

    // Pass 1: pair coincidences, per-pixel gap histograms and fine codes.
    let mut counter = CoincidenceCounter::new(n_pixels, array.n_tdc, frame_ticks, cfg.conditioning.cull);
    let mut hists = vec![InterarrivalHistogram::default(); n_pixels];
    let mut last_one: Vec<Option<u64>> = vec![None; n_pixels];
    let mut codes: Vec<Vec<u8>> = vec![Vec::new(); n_pixels];
    let mut n_frames = 0u64;
    source
        .visit(&mut |frames| {
            for frame in frames {
                if frame.pixels.len() != n_pixels {
                    return Err(Error::Malformed(format!(
                        "frame {} has {} pixels, configuration has {n_pixels}",
                        frame.frame_index,
                        frame.pixels.len()
                    )));
                }
                counter.add_frame(frame)?;
                let base = n_frames * cycles;
                for (p, tags) in frame.pixels.iter().enumerate() {
                    let mut prev_coarse = None;
                    // Gaps are taken within a frame; the readout pause separates frames.
                    last_one[p] = None;
                    for t in tags {
                        if t.coarse as u64 >= cycles || prev_coarse.is_some_and(|c| t.coarse <= c) {
                            return Err(Error::Malformed(format!(
                                "frame {} pixel {p}: coarse index {} out of order or beyond {cycles} cycles",
                                frame.frame_index, t.coarse
                            )));
                        }
                        if t.fine as usize >= TDC_CODES {
                            return Err(Error::Malformed(format!(
                                "frame {} pixel {p}: fine code {} ≥ {TDC_CODES}",
                                frame.frame_index, t.fine
                            )));
                        }
                        prev_coarse = Some(t.coarse);
                        let pos = base + t.coarse as u64;
                        if let Some(l) = last_one[p] {
                            hists[p].add_gap((pos - l) as usize);
                        }
                        last_one[p] = Some(pos);
                        hists[p].total_events += 1;
                        codes[p].push(t.fine);
                    }
                }
                n_frames += 1;
            }
            Ok(())
        })
        .map_err(|e| e.in_stage("read frames"))?;

    let cull = counter.finish().map_err(|e| e.in_stage("cull"))?;
    let mut kept_mask = vec![false; n_pixels];
    for &p in &cull.kept {
        kept_mask[p] = true;
    }
    let wall_time = n_frames as f64 * array.frame_period();
    let total_events: u64 = cull.events.iter().sum();

    // Coarse stream of the kept pixels.
    let want_coarse = cfg.extractor != ExtractorKind::ZhouBruck;
    let mut pooled = InterarrivalHistogram::default();
    for &p in &cull.kept {
        pooled.merge(&hists[p]);
    }
    let mut conditioning = ConditioningReport {
        pixels_kept: cull.kept.clone(),
        pixels_discarded: cull.discarded.clone(),
        ..Default::default()
    };
    let mut coarse_bits = BitBuf::new();
    let mut coarse_stats = ExtractorStats::default();
    let mut coarse_per_pixel = vec![0u64; n_pixels];
    if want_coarse && !cull.kept.is_empty() {
        let cutoff: Option<Cutoff> = match cfg.conditioning.guard {
            Some(_) => estimate_cutoff(&mut pooled, &cfg.conditioning.cutoff).ok(),
            None => Some(estimate_cutoff(&mut pooled, &cfg.conditioning.cutoff).map_err(|e| e.in_stage("cutoff"))?),
        };
        let guard = cfg
            .conditioning
            .guard
            .unwrap_or_else(|| cutoff.expect("estimated").guard);
        conditioning.guard_cycles = guard;
        conditioning.cutoff = cutoff;

        // Pass 2: guard removal and block-wise extraction.
        let block = cfg.extraction_block;
        let extractor = cfg.extractor;
        let max_depth = cfg.max_depth;
        let extract = move |bits: &BitBuf| match extractor {
            ExtractorKind::VonNeumann => {
                let out = von_neumann(bits);
                let s = ExtractorStats {
                    input_len: bits.len() as u64,
                    output_len: out.len() as u64,
                    depth_reached: 1,
                    n_bits: out.len() as u64,
                    ..Default::default()
                };
                (out, s)
            }
            _ => peres(bits, max_depth),
        };
        let mut states: Vec<CoarseState> = cull
            .kept
            .iter()
            .map(|_| CoarseState {
                remover: GuardRemover::new(guard),
                pending: BitBuf::new(),
                out: BitBuf::new(),
                stats: ExtractorStats::default(),
                events_out: 0,
            })
            .collect();
        let kept = cull.kept.clone();
        let mut seen = 0u64;
        source
            .visit(&mut |frames| {
                let first = seen;
                states.par_iter_mut().zip(&kept).for_each(|(st, &p)| {
                    for (k, frame) in frames.iter().enumerate() {
                        let base = (first + k as u64) * cycles;
                        for t in &frame.pixels[p] {
                            st.remover.one_at(base + t.coarse as u64, &mut st.pending);
                        }
                        st.remover.advance_to(base + cycles, &mut st.pending);
                        if st.pending.len() >= block {
                            st.events_out += st.pending.count_ones() as u64;
                            let (o, s) = extract(&st.pending);
                            st.out.extend_from(&o);
                            st.stats.absorb(&s);
                            st.pending = BitBuf::new();
                        }
                    }
                });
                seen += frames.len() as u64;
                Ok(())
            })
            .map_err(|e| e.in_stage("coarse extraction"))?;
        if seen != n_frames {
            return Err(Error::Malformed(format!(
                "frame source yielded {seen} frames on the second pass, {n_frames} on the first"
            )));
        }
        states.par_iter_mut().for_each(|st| {
            if !st.pending.is_empty() {
                st.events_out += st.pending.count_ones() as u64;
                let (o, s) = extract(&st.pending);
                st.out.extend_from(&o);
                st.stats.absorb(&s);
                st.pending = BitBuf::new();
            }
        });
        for (st, &p) in states.iter().zip(&kept) {
            coarse_bits.extend_from(&st.out);
            coarse_stats.absorb(&st.stats);
            coarse_per_pixel[p] = st.out.len() as u64;
            conditioning.samples_out += st.stats.input_len;
            conditioning.events_out += st.events_out;
        }
        conditioning.samples_in = n_frames * cycles * kept.len() as u64;
        conditioning.events_in = kept.iter().map(|&p| cull.events[p]).sum();
        conditioning.fraction_samples_removed = fraction_lost(conditioning.samples_out, conditioning.samples_in);
        conditioning.fraction_events_lost = fraction_lost(conditioning.events_out, conditioning.events_in);
        if wall_time > 0.0 {
            conditioning.effective_sample_rate =
                Some(conditioning.samples_out as f64 / (n_frames as f64 * array.frame_time * kept.len() as f64));
        }
    }

    // Fine codes of every pixel.
    let fine: Vec<(BitBuf, ExtractorStats, f64)> = codes
        .par_iter()
        .map(|c| {
            if c.is_empty() {
                return Ok((BitBuf::new(), ExtractorStats::default(), 0.0));
            }
            let syms = SymbolStream::from_codes(c, TDC_CODES as u32)?;
            let h = empirical_entropy(&syms)?;
            let (bits, s) = zhou_bruck(&syms, cfg.max_depth);
            Ok((bits, s, h))
        })
        .collect::<Result<_>>()
        .map_err(|e: Error| e.in_stage("fine extraction"))?;
    drop(codes);
    let mut fine_bits = BitBuf::new();
    let mut pixels = Vec::with_capacity(n_pixels);
    for (p, (bits, _, h)) in fine.iter().enumerate() {
        fine_bits.extend_from(bits);
        let n_tags = cull.events[p];
        pixels.push(PixelStats {
            pixel: p,
            kept: kept_mask[p],
            n_tags,
            code_entropy: *h,
            fine_bits: bits.len() as u64,
            efficiency: if n_tags > 0 && *h > 0.0 {
                extraction_efficiency(bits.len() as u64, n_tags, *h)?
            } else {
                0.0
            },
            coarse_bits: coarse_per_pixel[p],
        });
    }
    let rates = aggregate_rates(
        coarse_bits.len() as u64,
        fine_bits.len() as u64,
        wall_time,
        n_pixels,
        cull.kept.len(),
    );

    let coarse_report = serial_correlation(&coarse_bits, cfg.max_lag).ok();
    let fine_report = serial_correlation(&fine_bits, cfg.max_lag).ok();
    let mut bits = coarse_bits;
    bits.extend_from(&fine_bits);
    drop(fine_bits);
    let report = serial_correlation(&bits, cfg.max_lag).map_err(|e| e.in_stage("analysis"))?;
    let mut checks = Vec::new();
    push_report_checks(&mut checks, &report);
    let summary = RunSummary {
        mode: cfg.mode,
        extractor: cfg.extractor,
        seed: cfg.sim.seed,
        wall_time,
        output_bits: bits.len() as u64,
        output_rate: rates.total_rate,
        observed_count_rate: if wall_time > 0.0 {
            total_events as f64 / (n_frames as f64 * array.frame_time * n_pixels as f64)
        } else {
            0.0
        },
        conditioning: Some(conditioning),
        ks: None,
        extractor_stats: want_coarse.then_some(coarse_stats),
        raw_report: None,
        report,
        coarse_report,
        fine_report,
        rates: Some(rates),
        pixels,
        checks,
    };
    Ok(PipelineRun {
        bits,
        histogram: want_coarse.then_some(pooled),
        summary,
    })
}

fn fraction_lost(kept: u64, total: u64) -> f64 {
    if total == 0 {
        0.0
    } else {
        1.0 - kept as f64 / total as f64
    }
}
