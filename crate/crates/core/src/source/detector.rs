use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{derive_rng, poisson_ticks, DetectorModel, Domain, EventLabel, PhotonEventStream};
use crate::error::Result;

/// Passes a photon stream through a SPAD: dark counts are merged in, then
/// non-paralyzable dead time blocks, and every accepted avalanche may seed
/// an afterpulse that is itself subject to blocking (and may cascade).
///
/// Input labels are kept when present; unlabelled input counts as
/// [`EventLabel::True`], as do dark counts.
pub fn apply_detector(stream: &PhotonEventStream, model: &DetectorModel, seed: u64) -> Result<PhotonEventStream> {
    model.validate()?;
    stream.check()?;
    let dark = if model.dark_rate > 0.0 {
        let mut rng = derive_rng(seed, Domain::Dark, 0, 0);
        poisson_ticks(model.dark_rate * stream.tick, stream.span, &mut rng)
    } else {
        Vec::new()
    };
    let candidates = merge_labelled(stream, &dark);
    let mut rng = derive_rng(seed, Domain::Afterpulse, 0, 0);
    let (events, labels) = detect(&candidates, model, stream.span, &mut rng);
    Ok(PhotonEventStream {
        events,
        tick: stream.tick,
        span: stream.span,
        labels: Some(labels),
    })
}

fn merge_labelled(stream: &PhotonEventStream, dark: &[u64]) -> Vec<(u64, EventLabel)> {
    let label_at = |i: usize| stream.labels.as_ref().map_or(EventLabel::True, |l| l[i]);
    let mut out = Vec::with_capacity(stream.events.len() + dark.len());
    let (mut i, mut j) = (0, 0);
    while i < stream.events.len() || j < dark.len() {
        let take_stream = j >= dark.len() || (i < stream.events.len() && stream.events[i] <= dark[j]);
        if take_stream {
            out.push((stream.events[i], label_at(i)));
            i += 1;
        } else {
            out.push((dark[j], EventLabel::True));
            j += 1;
        }
    }
    out
}

/// Dead-time and afterpulse filter over time-sorted candidates.
///
/// Candidates may share a tick; the later one is simply blocked. When a
/// candidate and a pending afterpulse coincide, the candidate wins.
pub(crate) fn detect(
    candidates: &[(u64, EventLabel)],
    model: &DetectorModel,
    span: u64,
    rng: &mut ChaCha8Rng,
) -> (Vec<u64>, Vec<EventLabel>) {
    let mut events = Vec::with_capacity(candidates.len() + candidates.len() / 8);
    let mut labels = Vec::with_capacity(events.capacity());
    let mut pending: BinaryHeap<Reverse<u64>> = BinaryHeap::new();
    let mut last: Option<u64> = None;
    let mut i = 0;
    loop {
        let next_candidate = candidates.get(i).map(|c| c.0);
        let next_after = pending.peek().map(|r| r.0);
        let (t, label) = match (next_candidate, next_after) {
            (None, None) => break,
            (Some(c), Some(a)) if a < c => {
                pending.pop();
                (a, EventLabel::Afterpulse)
            }
            (Some(_), _) => {
                i += 1;
                candidates[i - 1]
            }
            (None, Some(a)) => {
                pending.pop();
                (a, EventLabel::Afterpulse)
            }
        };
        if last.is_some_and(|l| t - l < model.dead_time) {
            continue;
        }
        last = Some(t);
        events.push(t);
        labels.push(label);
        if model.afterpulse_prob > 0.0 && rng.random::<f64>() < model.afterpulse_prob {
            let at = t + rng.random_range(model.dead_time + 1..=model.afterpulse_window);
            if at < span {
                pending.push(Reverse(at));
            }
        }
    }
    (events, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::source::{gen_poisson_arrivals, SimConfig};

    fn model(dead: u64, p: f64, window: u64) -> DetectorModel {
        DetectorModel {
            dead_time: dead,
            pulse_width: 1.min(dead - 1),
            afterpulse_prob: p,
            afterpulse_window: window,
            dark_rate: 0.0,
        }
    }

    #[test]
    fn dead_time_blocks_close_events() {
        let s = PhotonEventStream::new(vec![0, 1, 5], 1e-9, 10).unwrap();
        let out = apply_detector(&s, &model(3, 0.0, 3), 0).unwrap();
        assert_eq!(out.events, vec![0, 5]);
        assert_eq!(out.labels.unwrap(), vec![EventLabel::True; 2]);
    }

    #[test]
    fn blocking_is_non_paralyzable() {
        // 3 is blocked by 0 but does not extend the dead period: 4 is accepted.
        let s = PhotonEventStream::new(vec![0, 3, 4], 1e-9, 10).unwrap();
        let out = apply_detector(&s, &model(4, 0.0, 4), 0).unwrap();
        assert_eq!(out.events, vec![0, 4]);
    }

    #[test]
    fn afterpulses_land_in_window_and_are_labelled() {
        let sim = SimConfig {
            photon_rate: 2e5,
            duration: 0.5,
            tick: 1e-9,
            seed: 9,
        };
        let photons = gen_poisson_arrivals(&sim).unwrap();
        let m = model(30, 0.3, 180);
        let out = apply_detector(&photons, &m, 9).unwrap();
        let labels = out.labels.as_ref().unwrap();
        let n_after = labels.iter().filter(|l| **l == EventLabel::Afterpulse).count();
        let n_true = labels.len() - n_after;
        let frac = n_after as f64 / n_true as f64;
        // Each accepted event spawns with p = 0.3; a few are blocked or cascade.
        assert!((0.25..0.45).contains(&frac), "afterpulse fraction {frac}");
        for (k, w) in out.events.windows(2).enumerate() {
            assert!(w[1] - w[0] >= 30);
            if labels[k + 1] == EventLabel::Afterpulse {
                // Some earlier accepted event lies in [t − 180, t − 31].
                let t = w[1];
                let has_parent = out.events[..=k]
                    .iter()
                    .rev()
                    .take_while(|&&e| t - e <= 180)
                    .any(|&e| t - e > 30);
                assert!(has_parent, "orphan afterpulse at {t}");
            }
        }
        let true_out: Vec<u64> = out
            .events
            .iter()
            .zip(labels)
            .filter(|(_, l)| **l == EventLabel::True)
            .map(|(t, _)| *t)
            .collect();
        let mut j = 0;
        for t in true_out {
            while photons.events[j] < t {
                j += 1;
            }
            assert_eq!(photons.events[j], t);
        }
    }

    #[test]
    fn dark_counts_add_true_events() {
        let s = PhotonEventStream::empty(1e-9, 1_000_000_000);
        let mut m = model(30, 0.0, 30);
        m.dark_rate = 1000.0;
        let out = apply_detector(&s, &m, 4).unwrap();
        assert!((out.len() as f64 - 1000.0).abs() < 4.0 * 1000f64.sqrt());
        assert!(out.labels.unwrap().iter().all(|l| *l == EventLabel::True));
    }

    #[test]
    fn existing_labels_survive() {
        let mut s = PhotonEventStream::new(vec![0, 50, 100], 1e-9, 200).unwrap();
        s.labels = Some(vec![EventLabel::True, EventLabel::Crosstalk, EventLabel::True]);
        let out = apply_detector(&s, &model(30, 0.0, 30), 0).unwrap();
        assert_eq!(out.labels.unwrap()[1], EventLabel::Crosstalk);
    }
}
