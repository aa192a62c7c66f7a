//! Removal of detector-induced correlations.
//!
//! A single detector leaves two marks on the sampled stream: no 1 can follow
//! another within the dead time, and afterpulses crowd the following few
//! cycles. Both are confined to a window after each 1, so deleting that
//! window restores an i.i.d. stream. In an array, crosstalk couples
//! neighbouring pixels; those pixels are dropped.

use serde::{Deserialize, Serialize};

use crate::bits::BitBuf;
use crate::error::{Error, Result};
use crate::source::{TagFrame, TDC_CODES};

/// Gaps between consecutive 1s, in samples.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InterarrivalHistogram {
    /// `counts[g]` is the number of gaps of exactly `g` samples.
    pub counts: Vec<u64>,
    /// Number of 1s the gaps were taken from, summed over merged streams.
    pub total_events: u64,
    pub fit: Option<GeometricFit>,
}

/// Maximum-likelihood geometric tail `P(g) ∝ q^g` for `g ≥ fit_from`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometricFit {
    pub fit_from: usize,
    /// Per-sample continuation probability.
    pub q: f64,
    /// Gaps at or above `fit_from`.
    pub n_fit: u64,
    /// `−ln q`: the exponential rate per sample.
    pub rate_per_sample: f64,
}

impl GeometricFit {
    /// Expected count in bin `g`, extrapolated below `fit_from` when needed.
    pub fn expected(&self, g: usize) -> f64 {
        let k = g as f64 - self.fit_from as f64;
        self.n_fit as f64 * (1.0 - self.q) * self.q.powf(k)
    }
}

impl InterarrivalHistogram {
    /// Gap histogram of one stream; needs at least two 1s.
    pub fn from_bits(bits: &BitBuf) -> Result<Self> {
        let mut h = Self::default();
        h.add_stream(bits);
        if h.total_events < 2 {
            return Err(Error::TooShort(format!(
                "gap histogram needs at least two 1s, found {}",
                h.total_events
            )));
        }
        Ok(h)
    }

    /// Adds the gaps of another stream. Gaps never span streams.
    pub fn add_stream(&mut self, bits: &BitBuf) {
        let mut prev: Option<usize> = None;
        for i in bits.iter_ones() {
            if let Some(p) = prev {
                self.add_gap(i - p);
            }
            prev = Some(i);
            self.total_events += 1;
        }
        self.fit = None;
    }

    pub fn add_gap(&mut self, gap: usize) {
        if gap >= self.counts.len() {
            self.counts.resize(gap + 1, 0);
        }
        self.counts[gap] += 1;
    }

    pub fn merge(&mut self, other: &InterarrivalHistogram) {
        if other.counts.len() > self.counts.len() {
            self.counts.resize(other.counts.len(), 0);
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total_events += other.total_events;
        self.fit = None;
    }

    pub fn n_gaps(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn count(&self, g: usize) -> u64 {
        self.counts.get(g).copied().unwrap_or(0)
    }

    /// Smallest gap observed: the dead-time floor.
    pub fn floor(&self) -> Option<usize> {
        self.counts.iter().position(|&c| c > 0)
    }

    /// Fits the geometric tail over gaps `≥ fit_from` and stores the result.
    pub fn fit_tail(&mut self, fit_from: usize) -> Result<GeometricFit> {
        let (mut n, mut sum) = (0u64, 0f64);
        for (g, &c) in self.counts.iter().enumerate().skip(fit_from) {
            n += c;
            sum += c as f64 * (g - fit_from) as f64;
        }
        if n < 2 {
            return Err(Error::TooShort(format!(
                "only {n} gaps at or beyond {fit_from} samples to fit"
            )));
        }
        let mean = sum / n as f64;
        if mean <= 0.0 {
            return Err(Error::NoCutoff(format!(
                "every gap beyond {fit_from} has the same length; no geometric tail"
            )));
        }
        let q = mean / (1.0 + mean);
        let fit = GeometricFit {
            fit_from,
            q,
            n_fit: n,
            rate_per_sample: -q.ln(),
        };
        self.fit = Some(fit);
        Ok(fit)
    }

    /// `(gap, count, expected)` rows up to `max_gap`.
    pub fn rows(&self, max_gap: usize) -> Vec<(usize, u64, f64)> {
        (0..=max_gap)
            .map(|g| (g, self.count(g), self.fit.map_or(f64::NAN, |f| f.expected(g))))
            .collect()
    }
}

/// Cut-off search settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutoffParams {
    /// First gap of the fitted tail, in samples.
    pub fit_from: usize,
    /// Accepted observed/expected ratio range.
    pub band: (f64, f64),
    /// Consecutive in-band bins required.
    pub stable_bins: usize,
    /// Largest cut-off considered.
    pub max_search: usize,
}

impl Default for CutoffParams {
    fn default() -> Self {
        Self {
            fit_from: 64,
            band: (0.9, 1.1),
            stable_bins: 3,
            max_search: 512,
        }
    }
}

/// Where the histogram stops deviating from its fitted tail.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cutoff {
    /// First gap length that behaves like the geometric tail.
    pub cutoff: usize,
    /// Samples to delete after each 1: `cutoff − 1`.
    pub guard: usize,
    /// Shortest observed gap.
    pub floor: usize,
}

/// Finds the smallest gap `g ≥ floor` from which `stable_bins` consecutive
/// bins match the fitted tail to within `band`. The histogram is fitted
/// (or refitted) from `params.fit_from`.
pub fn estimate_cutoff(hist: &mut InterarrivalHistogram, params: &CutoffParams) -> Result<Cutoff> {
    let floor = hist
        .floor()
        .ok_or_else(|| Error::TooShort("empty gap histogram".into()))?;
    let fit = match hist.fit {
        Some(f) if f.fit_from == params.fit_from => f,
        _ => hist.fit_tail(params.fit_from)?,
    };
    let (lo, hi) = params.band;
    let in_band = |g: usize| {
        let expected = fit.expected(g);
        let ratio = hist.count(g) as f64 / expected;
        expected > 0.0 && (lo..=hi).contains(&ratio)
    };
    let mut worst = (floor, 0.0f64);
    for g in floor.max(1)..=params.max_search {
        if (g..g + params.stable_bins).all(in_band) {
            return Ok(Cutoff {
                cutoff: g,
                guard: g - 1,
                floor,
            });
        }
        let ratio = hist.count(g) as f64 / fit.expected(g);
        if (ratio - 1.0).abs() > (worst.1 - 1.0).abs() {
            worst = (g, ratio);
        }
    }
    Err(Error::NoCutoff(format!(
        "no {} consecutive bins within [{lo}, {hi}] of the fit between {floor} and {}; \
         largest deviation at gap {} (observed/expected {:.3}), {} gaps in total",
        params.stable_bins,
        params.max_search,
        worst.0,
        worst.1,
        hist.n_gaps()
    )))
}

/// Deletes the `guard` samples that follow every 1 of the input.
///
/// Deletion windows are measured on the input positions, so a 1 inside
/// another 1's window is deleted but still opens its own window.
pub fn remove_guard(bits: &BitBuf, guard: usize) -> BitBuf {
    if guard == 0 {
        return bits.clone();
    }
    let mut out = BitBuf::with_capacity(bits.len());
    let mut remover = GuardRemover::new(guard);
    for i in bits.iter_ones() {
        remover.one_at(i as u64, &mut out);
    }
    remover.advance_to(bits.len() as u64, &mut out);
    out
}

/// [`remove_guard`] over a stream that arrives in pieces, fed as the
/// positions of its 1s.
#[derive(Clone, Debug)]
pub struct GuardRemover {
    guard: u64,
    /// First input position not yet emitted or deleted.
    cursor: u64,
}

impl GuardRemover {
    pub fn new(guard: usize) -> Self {
        Self {
            guard: guard as u64,
            cursor: 0,
        }
    }

    /// Records a 1 at input position `pos`; positions must increase.
    pub fn one_at(&mut self, pos: u64, out: &mut BitBuf) {
        if pos >= self.cursor {
            out.push_zeros((pos - self.cursor) as usize);
            out.push(true);
        }
        self.cursor = self.cursor.max(pos + 1 + self.guard);
    }

    /// Emits the surviving zeros up to input position `end`.
    pub fn advance_to(&mut self, end: u64, out: &mut BitBuf) {
        if self.cursor < end {
            out.push_zeros((end - self.cursor) as usize);
            self.cursor = end;
        }
    }
}

/// What conditioning did to a stream (or to a set of pixel streams).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConditioningReport {
    pub guard_cycles: usize,
    pub cutoff: Option<Cutoff>,
    pub samples_in: u64,
    pub samples_out: u64,
    pub events_in: u64,
    pub events_out: u64,
    pub fraction_samples_removed: f64,
    /// Fraction of detected events deleted with the guard windows.
    pub fraction_events_lost: f64,
    /// Sample rate left after deletion, when the input rate is known.
    pub effective_sample_rate: Option<f64>,
    pub pixels_kept: Vec<usize>,
    pub pixels_discarded: Vec<usize>,
}

impl ConditioningReport {
    pub fn add_stream(&mut self, before: &BitBuf, after: &BitBuf) {
        self.samples_in += before.len() as u64;
        self.samples_out += after.len() as u64;
        self.events_in += before.count_ones() as u64;
        self.events_out += after.count_ones() as u64;
        self.update_fractions();
    }

    fn update_fractions(&mut self) {
        let frac = |a: u64, b: u64| if b == 0 { 0.0 } else { 1.0 - a as f64 / b as f64 };
        self.fraction_samples_removed = frac(self.samples_out, self.samples_in);
        self.fraction_events_lost = frac(self.events_out, self.events_in);
    }
}

/// Pixel-pair coincidence settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CullParams {
    /// Two tags coincide when their times differ by at most this many ticks.
    pub window: u64,
    /// Largest tolerated excess coincidence probability.
    pub threshold: f64,
    /// Pairs up to this index distance within a bank are compared.
    pub neighbourhood: usize,
}

impl Default for CullParams {
    fn default() -> Self {
        Self {
            window: 2 * TDC_CODES as u64,
            threshold: 0.005,
            neighbourhood: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairCoincidence {
    pub a: usize,
    pub b: usize,
    pub coincidences: u64,
    /// Coincidences expected from independent pixels.
    pub accidental: f64,
    /// `(coincidences − accidental) / min(N_a, N_b)`.
    pub excess_probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CullOutcome {
    pub kept: Vec<usize>,
    pub discarded: Vec<usize>,
    pub pairs: Vec<PairCoincidence>,
    pub events: Vec<u64>,
}

/// Accumulates pixel-pair coincidences frame by frame.
#[derive(Clone, Debug)]
pub struct CoincidenceCounter {
    n_pixels: usize,
    n_tdc: usize,
    frame_ticks: u64,
    params: CullParams,
    frames: u64,
    events: Vec<u64>,
    pairs: Vec<(usize, usize, u64, f64)>,
}

impl CoincidenceCounter {
    /// `n_tdc` pixels share a bank; only pairs inside a bank are compared.
    pub fn new(n_pixels: usize, n_tdc: usize, frame_ticks: u64, params: CullParams) -> Self {
        let mut pairs = Vec::new();
        for a in 0..n_pixels {
            for b in a + 1..=(a + params.neighbourhood).min(n_pixels.saturating_sub(1)) {
                if a / n_tdc.max(1) == b / n_tdc.max(1) {
                    pairs.push((a, b, 0, 0.0));
                }
            }
        }
        Self {
            n_pixels,
            n_tdc,
            frame_ticks,
            params,
            frames: 0,
            events: vec![0; n_pixels],
            pairs,
        }
    }

    pub fn add_frame(&mut self, frame: &TagFrame) -> Result<()> {
        if frame.pixels.len() != self.n_pixels {
            return Err(Error::Malformed(format!(
                "frame {} has {} pixels, expected {}",
                frame.frame_index,
                frame.pixels.len(),
                self.n_pixels
            )));
        }
        let times: Vec<Vec<u64>> = frame
            .pixels
            .iter()
            .map(|tags| {
                tags.iter()
                    .map(|t| t.coarse as u64 * TDC_CODES as u64 + t.fine as u64)
                    .collect()
            })
            .collect();
        for (n, t) in self.events.iter_mut().zip(&times) {
            *n += t.len() as u64;
        }
        let w = self.params.window;
        let span = (2 * w + 1) as f64 / self.frame_ticks as f64;
        for (a, b, c, acc) in &mut self.pairs {
            *c += count_coincidences(&times[*a], &times[*b], w);
            *acc += times[*a].len() as f64 * times[*b].len() as f64 * span;
        }
        self.frames += 1;
        Ok(())
    }

    pub fn frames(&self) -> u64 {
        self.frames
    }

    /// Decides which pixels to keep.
    ///
    /// Pairs whose excess coincidence probability exceeds the threshold
    /// conflict. Pixels are settled one at a time: the unsettled pixel with
    /// the fewest unsettled conflicts (then fewer events, then lower index)
    /// is kept and its conflicting neighbours are discarded.
    pub fn finish(&self) -> Result<CullOutcome> {
        if self.frames < 2 {
            return Err(Error::TooShort(format!(
                "pixel culling needs at least 2 frames, got {}",
                self.frames
            )));
        }
        let pairs: Vec<PairCoincidence> = self
            .pairs
            .iter()
            .map(|&(a, b, c, acc)| {
                let n = self.events[a].min(self.events[b]);
                PairCoincidence {
                    a,
                    b,
                    coincidences: c,
                    accidental: acc,
                    excess_probability: if n == 0 { 0.0 } else { (c as f64 - acc) / n as f64 },
                }
            })
            .collect();
        let mut adj = vec![Vec::new(); self.n_pixels];
        for p in pairs.iter().filter(|p| p.excess_probability > self.params.threshold) {
            adj[p.a].push(p.b);
            adj[p.b].push(p.a);
        }
        #[derive(Clone, Copy, PartialEq)]
        enum State {
            Open,
            Kept,
            Dropped,
        }
        let mut state = vec![State::Open; self.n_pixels];
        loop {
            let open_degree = |p: usize, st: &[State]| adj[p].iter().filter(|&&q| st[q] == State::Open).count();
            let next = (0..self.n_pixels)
                .filter(|&p| state[p] == State::Open)
                .min_by_key(|&p| (open_degree(p, &state), self.events[p], p));
            let Some(p) = next else { break };
            state[p] = State::Kept;
            for &q in &adj[p] {
                if state[q] == State::Open {
                    state[q] = State::Dropped;
                }
            }
        }
        let kept: Vec<usize> = (0..self.n_pixels).filter(|&p| state[p] == State::Kept).collect();
        let discarded: Vec<usize> = (0..self.n_pixels).filter(|&p| state[p] == State::Dropped).collect();
        log::debug!(
            "culling kept {} of {} pixels in {} bank(s)",
            kept.len(),
            self.n_pixels,
            self.n_pixels / self.n_tdc.max(1)
        );
        Ok(CullOutcome {
            kept,
            discarded,
            pairs,
            events: self.events.clone(),
        })
    }
}

/// Number of pairs `(x, y)`, `x ∈ a`, `y ∈ b`, with `|x − y| ≤ w`. Both inputs sorted.
fn count_coincidences(a: &[u64], b: &[u64], w: u64) -> u64 {
    let mut lo = 0;
    let mut total = 0u64;
    for &x in a {
        while lo < b.len() && b[lo] + w < x {
            lo += 1;
        }
        let mut k = lo;
        while k < b.len() && b[k] <= x + w {
            total += 1;
            k += 1;
        }
    }
    total
}

/// Culls crosstalk-coupled pixels from a set of frames.
pub fn cull_pixels(frames: &[TagFrame], n_tdc: usize, frame_ticks: u64, params: &CullParams) -> Result<CullOutcome> {
    let n_pixels = frames.first().map_or(0, |f| f.pixels.len());
    let mut counter = CoincidenceCounter::new(n_pixels, n_tdc, frame_ticks, *params);
    for f in frames {
        counter.add_frame(f)?;
    }
    counter.finish()
}
