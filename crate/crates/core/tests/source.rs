use proptest::prelude::*;
use qrng_core::analysis::ks_geometric;
use qrng_core::conditioning::{cull_pixels, CullParams, InterarrivalHistogram};
use qrng_core::config::PipelineConfig;
use qrng_core::source::{
    apply_detector, gen_poisson_arrivals, simulate_frame_events, simulate_frames, ArrayConfig, DetectorModel,
    EventLabel, SimConfig, TdcProfile, TDC_CODES,
};
use statrs::distribution::{ChiSquared, ContinuousCDF, DiscreteCDF, Poisson};

fn sim(rate: f64, duration: f64, tick: f64, seed: u64) -> SimConfig {
    SimConfig {
        photon_rate: rate,
        duration,
        tick,
        seed,
    }
}

/// The array preset, shortened to `frames` frames.
fn array_preset(frames: u64) -> (ArrayConfig, SimConfig, DetectorModel) {
    let cfg = PipelineConfig::linospad();
    let array = cfg.array.unwrap();
    let mut s = cfg.sim;
    s.duration = frames as f64 * array.frame_time;
    (array, s, cfg.detector)
}

#[test]
fn replay_reproduces_every_event() {
    let s = sim(2e5, 0.5, 1e-9, 42);
    let d = PipelineConfig::randy().detector;
    let a = apply_detector(&gen_poisson_arrivals(&s).unwrap(), &d, 42).unwrap();
    let b = apply_detector(&gen_poisson_arrivals(&s).unwrap(), &d, 42).unwrap();
    assert_eq!(a, b);
    let c = apply_detector(&gen_poisson_arrivals(&sim(2e5, 0.5, 1e-9, 43)).unwrap(), &d, 43).unwrap();
    assert_ne!(a.events, c.events);
}

#[test]
fn frames_do_not_depend_on_the_batch_they_are_built_in() {
    let (array, s, d) = array_preset(6);
    let all = simulate_frames(&array, &s, &d, 0..6).unwrap();
    let tail = simulate_frames(&array, &s, &d, 3..6).unwrap();
    assert_eq!(&all[3..], &tail[..]);
    let again = simulate_frames(&array, &s, &d, 0..6).unwrap();
    assert_eq!(all, again);
}

#[test]
fn event_count_is_poisson() {
    // 1e6 expected events, sigma 1000.
    let stream = gen_poisson_arrivals(&sim(1e5, 10.0, 1e-9, 7)).unwrap();
    let n = stream.len() as f64;
    assert!((n - 1e6).abs() < 4000.0, "{n}");
}

#[test]
fn mean_gap_at_200_kcps_is_5_us() {
    let stream = gen_poisson_arrivals(&sim(2e5, 2.0, 1e-9, 3)).unwrap();
    let n = stream.len() as f64;
    let mean = (stream.events[stream.len() - 1] - stream.events[0]) as f64 * 1e-9 / (n - 1.0);
    // Relative error of the mean of n exponential gaps is 1/sqrt(n).
    assert!((mean - 5e-6).abs() < 4.0 * 5e-6 / n.sqrt(), "{mean}");
}

#[test]
fn zero_duration_is_empty() {
    assert!(gen_poisson_arrivals(&sim(2e5, 0.0, 1e-9, 1)).unwrap().is_empty());
}

#[test]
fn saturating_rate_is_rejected() {
    assert!(gen_poisson_arrivals(&sim(1e9, 1.0, 1e-9, 1)).is_err());
}

#[test]
fn gaps_beyond_dead_time_are_geometric_without_afterpulses() {
    let d = DetectorModel {
        dead_time: 30,
        pulse_width: 5,
        afterpulse_prob: 0.0,
        afterpulse_window: 30,
        dark_rate: 100.0,
    };
    let s = sim(2e5, 5.0, 1e-9, 11);
    let out = apply_detector(&gen_poisson_arrivals(&s).unwrap(), &d, 11).unwrap();
    let mut hist = InterarrivalHistogram::default();
    for w in out.events.windows(2) {
        hist.add_gap((w[1] - w[0]) as usize);
    }
    assert_eq!(hist.floor(), Some(30));
    let ks = ks_geometric(&hist, 30).unwrap();
    assert!(ks.pass, "{ks:?}");
}

#[test]
fn detected_count_at_400_per_frame_almost_never_saturates() {
    // A detected count is at most as dispersed as a Poisson count of the same mean.
    let tail = Poisson::new(400.0).unwrap().sf(512);
    assert!(tail < 1e-6, "{tail}");

    let (mut array, s, d) = array_preset(200);
    array.per_pixel_rate.clear();
    let frames = simulate_frames(&array, &s, &d, 0..200).unwrap();
    let tags: usize = frames.iter().map(|f| f.n_tags()).sum();
    let mean = tags as f64 / (200.0 * array.n_pixels as f64);
    assert!((380.0..420.0).contains(&mean), "{mean}");
    assert!(frames.iter().all(|f| f.saturated.is_empty()));
}

#[test]
fn uniform_tdc_gives_flat_code_histogram() {
    let (mut array, s, d) = array_preset(20);
    array.tdc_profile = TdcProfile::uniform();
    let frames = simulate_frames(&array, &s, &d, 0..20).unwrap();
    let mut counts = [0u64; TDC_CODES];
    for tag in frames.iter().flat_map(|f| f.pixels.iter().flatten()) {
        counts[tag.fine as usize] += 1;
    }
    let n: u64 = counts.iter().sum();
    let e = n as f64 / TDC_CODES as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
    let limit = ChiSquared::new((TDC_CODES - 1) as f64).unwrap().inverse_cdf(0.999);
    assert!(chi2 < limit, "chi2 {chi2} over {limit} with {n} tags");
}

#[test]
fn without_crosstalk_coincidences_match_independence() {
    let (mut array, s, d) = array_preset(100);
    array.crosstalk_map.clear();
    let frames = simulate_frames(&array, &s, &d, 0..100).unwrap();
    let outcome = cull_pixels(&frames, array.n_tdc, array.frame_ticks(s.tick), &CullParams::default()).unwrap();
    assert_eq!(outcome.kept.len(), array.n_pixels);
    for p in &outcome.pairs {
        let z = (p.coincidences as f64 - p.accidental) / p.accidental.sqrt();
        assert!(z.abs() < 5.0, "pair {}-{}: z = {z}", p.a, p.b);
    }
}

#[test]
fn crosstalk_labels_appear_only_with_crosstalk() {
    let (array, s, d) = array_preset(2);
    let streams = simulate_frame_events(&array, &s, &d, 1).unwrap();
    let xt: usize = streams
        .iter()
        .map(|st| {
            st.labels
                .as_ref()
                .unwrap()
                .iter()
                .filter(|l| **l == EventLabel::Crosstalk)
                .count()
        })
        .sum();
    assert!(xt > 0);
    let mut quiet = array.clone();
    quiet.crosstalk_map.clear();
    for st in simulate_frame_events(&quiet, &s, &d, 1).unwrap() {
        assert!(!st.labels.unwrap().contains(&EventLabel::Crosstalk));
    }
}

fn detector() -> impl Strategy<Value = DetectorModel> {
    (1u64..60, 0.0f64..0.6, 0u64..200, 0.0f64..1e5).prop_flat_map(|(dead, ap, extra, dark)| {
        (1..dead.max(2)).prop_map(move |pw| DetectorModel {
            dead_time: dead.max(2),
            pulse_width: pw,
            afterpulse_prob: ap,
            afterpulse_window: dead.max(2) + 1 + extra,
            dark_rate: dark,
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dead_time_is_a_hard_floor(d in detector(), rate in 1e4f64..3e6, seed in any::<u64>()) {
        let s = sim(rate, 2e-3, 1e-9, seed);
        let out = apply_detector(&gen_poisson_arrivals(&s).unwrap(), &d, seed).unwrap();
        for w in out.events.windows(2) {
            prop_assert!(w[1] - w[0] >= d.dead_time);
        }
        prop_assert!(out.events.last().is_none_or(|&t| t < out.span));
    }

    #[test]
    fn labels_partition_the_events(d in detector(), rate in 1e4f64..3e6, seed in any::<u64>()) {
        let s = sim(rate, 2e-3, 1e-9, seed);
        let out = apply_detector(&gen_poisson_arrivals(&s).unwrap(), &d, seed).unwrap();
        let labels = out.labels.as_ref().unwrap();
        prop_assert_eq!(labels.len(), out.len());
        let count = |l: EventLabel| labels.iter().filter(|x| **x == l).count();
        prop_assert_eq!(
            count(EventLabel::True) + count(EventLabel::Afterpulse) + count(EventLabel::Crosstalk),
            out.len()
        );
        prop_assert_eq!(count(EventLabel::Crosstalk), 0);
    }

    #[test]
    fn filter_only_detector_keeps_a_subset(dead in 2u64..80, rate in 1e4f64..3e6, seed in any::<u64>()) {
        let d = DetectorModel {
            dead_time: dead,
            pulse_width: 1,
            afterpulse_prob: 0.0,
            afterpulse_window: dead,
            dark_rate: 0.0,
        };
        let input = gen_poisson_arrivals(&sim(rate, 2e-3, 1e-9, seed)).unwrap();
        let out = apply_detector(&input, &d, seed).unwrap();
        let all: std::collections::HashSet<u64> = input.events.iter().copied().collect();
        prop_assert!(out.events.iter().all(|t| all.contains(t)));
    }

    #[test]
    fn no_pixel_exceeds_its_buffer(cap in 1usize..60, seed in any::<u64>()) {
        let (mut array, mut s, d) = array_preset(2);
        array.n_pixels = 8;
        array.n_tdc = 8;
        array.frame_time = 40e-6;
        array.buffer_cap = cap;
        array.per_pixel_rate.clear();
        array.crosstalk_map = qrng_core::source::neighbour_crosstalk(8, 8, &[(1, 0.05)]);
        s.duration = 2.0 * array.frame_time;
        s.seed = seed;
        let frames = simulate_frames(&array, &s, &d, 0..2).unwrap();
        for f in &frames {
            let events = simulate_frame_events(&array, &s, &d, f.frame_index).unwrap();
            for (p, tags) in f.pixels.iter().enumerate() {
                prop_assert!(tags.len() <= cap);
                prop_assert_eq!(f.saturated.contains(&p), events[p].len() > cap);
                let cycles = array.cycles_per_frame(s.tick) as u32;
                prop_assert!(tags.iter().all(|t| t.coarse < cycles && (t.fine as usize) < TDC_CODES));
            }
        }
    }
}
