//! Entropy, rate and randomness statistics.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::bits::BitBuf;
use crate::conditioning::InterarrivalHistogram;
use crate::error::{Error, Result};
use crate::extraction::SymbolStream;

/// Two-sided 99 % normal quantile.
pub const Z_99: f64 = 2.575_829_303_548_901;

/// Shannon entropy of a Bernoulli(p) variable, in bits. `H(0) = H(1) = 0`.
pub fn binary_entropy(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("probability {p} outside [0, 1]")));
    }
    Ok(h2(p))
}

fn h2(p: f64) -> f64 {
    let term = |x: f64| if x > 0.0 { -x * x.log2() } else { 0.0 };
    term(p) + term(1.0 - p)
}

/// Plug-in entropy of the empirical symbol distribution, in bits.
pub fn empirical_entropy(symbols: &SymbolStream) -> Result<f64> {
    if symbols.is_empty() {
        return Err(Error::TooShort("entropy of an empty symbol stream".into()));
    }
    let mut counts = vec![0u64; symbols.alphabet_size() as usize];
    for &s in symbols.symbols() {
        counts[s as usize] += 1;
    }
    Ok(entropy_of_counts(&counts))
}

/// Entropy of the distribution proportional to `counts`, in bits.
pub fn entropy_of_counts(counts: &[u64]) -> f64 {
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

/// Entropy of a probability vector, in bits.
pub fn entropy_of_probabilities(p: &[f64]) -> f64 {
    p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.log2()).sum()
}

/// One row of a rate curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub frequency: f64,
    /// Probability that a sampling period holds no detection.
    pub p_empty: f64,
    pub p_one: f64,
    /// Entropy per sample, bits.
    pub entropy: f64,
    /// i.i.d. bit rate after ideal extraction, bit/s.
    pub rate: f64,
    /// `rate × (1 − loss)`: an approximation of the rate left after
    /// conditioning deletes a fraction `loss` of the samples.
    pub effective_rate: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateCurve {
    pub photon_rate: f64,
    pub loss: Option<f64>,
    pub points: Vec<RatePoint>,
}

/// Entropy and extractable rate of a clock sampling Poisson arrivals at
/// `photon_rate`, for each sampling frequency.
pub fn rate_curve(photon_rate: f64, freqs: &[f64], loss: Option<f64>) -> Result<RateCurve> {
    if !(photon_rate > 0.0 && photon_rate.is_finite()) {
        return Err(Error::InvalidArgument("photon rate must be positive".into()));
    }
    if let Some(l) = loss {
        if !(0.0..=1.0).contains(&l) {
            return Err(Error::InvalidArgument(format!("loss fraction {l} outside [0, 1]")));
        }
    }
    let points = freqs
        .iter()
        .map(|&f| {
            if !(f > 0.0 && f.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "sampling frequency {f} must be positive"
                )));
            }
            let p_empty = (-photon_rate / f).exp();
            let p_one = -(-photon_rate / f).exp_m1();
            let entropy = h2(p_one);
            let rate = f * entropy;
            Ok(RatePoint {
                frequency: f,
                p_empty,
                p_one,
                entropy,
                rate,
                effective_rate: loss.map(|l| rate * (1.0 - l)),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RateCurve {
        photon_rate,
        loss,
        points,
    })
}

/// `n` frequencies spaced logarithmically over `[lo, hi]`.
pub fn log_frequencies(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Sampling frequency at which the per-sample entropy peaks, found by
/// golden-section search over `[lo, hi]`.
pub fn entropy_peak_frequency(photon_rate: f64, lo: f64, hi: f64) -> f64 {
    let entropy = |f: f64| h2(-(-photon_rate / f).exp_m1());
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (entropy(c), entropy(d));
    for _ in 0..200 {
        if (b - a).abs() <= 1e-9 * b.abs() {
            break;
        }
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = entropy(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = entropy(d);
        }
    }
    0.5 * (a + b)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LagCorrelation {
    pub lag: usize,
    pub coefficient: f64,
    /// Within ±1/√N.
    pub within_std: bool,
    /// Within ±2.576/√N.
    pub within_99: bool,
}

/// Bias, entropy and serial correlation of a bit stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BitReport {
    pub n_bits: u64,
    pub n_ones: u64,
    /// `|p1 − 1/2|`.
    pub bias: f64,
    /// Bias limit `3/√N`.
    pub bias_limit: f64,
    pub bias_ok: bool,
    pub entropy: f64,
    /// `1/√N`.
    pub std_band: f64,
    /// `2.576/√N`.
    pub band_99: f64,
    /// Per-lag band that keeps the chance of any of the `L` lags straying
    /// outside it at 1 % for an ideal source.
    pub family_band: f64,
    pub lags: Vec<LagCorrelation>,
    pub failing_lags: Vec<usize>,
    /// Every lag lies inside `family_band`.
    pub pass: bool,
}

/// Lag-k autocorrelation of the ±1-mapped bits for `k = 1..=max_lag`.
///
/// The estimator is `Σ (y_i − ȳ)(y_{i+k} − ȳ) / Σ (y_i − ȳ)²`, computed
/// exactly from bit counts. Needs more than `100 · max_lag` bits.
pub fn serial_correlation(bits: &BitBuf, max_lag: usize) -> Result<BitReport> {
    let n = bits.len();
    if max_lag == 0 {
        return Err(Error::InvalidArgument("max_lag must be at least 1".into()));
    }
    if n <= 100 * max_lag {
        return Err(Error::TooShort(format!(
            "{n} bits; serial correlation up to lag {max_lag} needs more than {}",
            100 * max_lag
        )));
    }
    let ones = bits.count_ones();
    if ones == 0 || ones == n {
        return Err(Error::InvalidArgument(format!(
            "constant stream of {n} {}s has no serial correlation",
            if ones == 0 { 0 } else { 1 }
        )));
    }
    let same = coincident_ones(bits, max_lag);
    let m = ones as f64 / n as f64;
    let denom = n as f64 * m * (1.0 - m);
    let (mut head, mut tail) = (0usize, 0usize);
    let sqrt_n = (n as f64).sqrt();
    let std_band = 1.0 / sqrt_n;
    let band_99 = Z_99 / sqrt_n;
    let family_band = family_z(max_lag) / sqrt_n;
    let mut lags = Vec::with_capacity(max_lag);
    for (k, &same_k) in same.iter().enumerate().take(max_lag + 1).skip(1) {
        head += bits.get(k - 1) as usize;
        tail += bits.get(n - k) as usize;
        let a = (ones - tail) as f64;
        let b = (ones - head) as f64;
        let num = same_k as f64 - m * (a + b) + (n - k) as f64 * m * m;
        let c = (num / denom).clamp(-1.0, 1.0);
        lags.push(LagCorrelation {
            lag: k,
            coefficient: c,
            within_std: c.abs() <= std_band,
            within_99: c.abs() <= band_99,
        });
    }
    let failing_lags: Vec<usize> = lags
        .iter()
        .filter(|l| l.coefficient.abs() > family_band)
        .map(|l| l.lag)
        .collect();
    let p1 = m;
    let bias = (p1 - 0.5).abs();
    let bias_limit = 3.0 / sqrt_n;
    Ok(BitReport {
        n_bits: n as u64,
        n_ones: ones as u64,
        bias,
        bias_limit,
        bias_ok: bias < bias_limit,
        entropy: h2(p1),
        std_band,
        band_99,
        family_band,
        pass: failing_lags.is_empty(),
        failing_lags,
        lags,
    })
}

/// Normal quantile for a family of `lags` two-sided tests at joint 99 %.
pub fn family_z(lags: usize) -> f64 {
    let alpha = 1.0 - 0.99f64.powf(1.0 / lags as f64);
    Normal::standard().inverse_cdf(1.0 - alpha / 2.0)
}

/// `out[k]` = number of `i` with `x_i = x_{i+k} = 1`, for `k ≤ max_lag`.
fn coincident_ones(bits: &BitBuf, max_lag: usize) -> Vec<u64> {
    let mut out = vec![0u64; max_lag + 1];
    let n_words = bits.words().len();
    let ones = bits.count_ones();
    if ones.saturating_mul(max_lag.div_ceil(64) + 1) * 4 < n_words * max_lag {
        for i in bits.iter_ones() {
            let mut base = i + 1;
            while base <= i + max_lag {
                let mut w = bits.word_at(base);
                while w != 0 {
                    let k = base + w.trailing_zeros() as usize - i;
                    if k > max_lag {
                        break;
                    }
                    out[k] += 1;
                    w &= w - 1;
                }
                base += 64;
            }
        }
    } else {
        let words = bits.words();
        for (k, slot) in out.iter_mut().enumerate().skip(1) {
            *slot = words
                .iter()
                .enumerate()
                .map(|(wi, &w)| (w & bits.word_at(wi * 64 + k)).count_ones() as u64)
                .sum();
        }
    }
    out
}

/// Kolmogorov–Smirnov comparison of gap lengths with a fitted geometric law.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsReport {
    pub n: u64,
    /// Smallest admissible gap.
    pub start: usize,
    /// Fitted per-sample probability of a 1.
    pub p: f64,
    pub statistic: f64,
    /// `1.6276/√n`, the 1 % critical value.
    pub critical_1pct: f64,
    /// Asymptotic Kolmogorov tail probability of `statistic`.
    pub p_value: f64,
    pub pass: bool,
}

/// Kolmogorov distribution 1 % critical value of `√n·D`.
pub const KS_CRITICAL_1PCT: f64 = 1.627_624;

/// Tests whether gaps `≥ start` follow `P(g) = p(1 − p)^(g − start)` with `p`
/// fitted by maximum likelihood.
pub fn ks_geometric(hist: &InterarrivalHistogram, start: usize) -> Result<KsReport> {
    let (mut n, mut sum) = (0u64, 0f64);
    for (g, &c) in hist.counts.iter().enumerate().skip(start) {
        n += c;
        sum += c as f64 * (g - start) as f64;
    }
    if n < 2 {
        return Err(Error::TooShort(format!("{n} gaps for a goodness-of-fit test")));
    }
    let mean = sum / n as f64;
    let p = 1.0 / (1.0 + mean);
    let mut cum = 0u64;
    let mut d = 0f64;
    for (g, &c) in hist.counts.iter().enumerate().skip(start) {
        cum += c;
        let model = 1.0 - (1.0 - p).powf((g - start + 1) as f64);
        let emp = cum as f64 / n as f64;
        d = d.max((emp - model).abs());
    }
    let sqrt_n = (n as f64).sqrt();
    Ok(KsReport {
        n,
        start,
        p,
        statistic: d,
        critical_1pct: KS_CRITICAL_1PCT / sqrt_n,
        p_value: kolmogorov_tail(d * sqrt_n),
        pass: d * sqrt_n <= KS_CRITICAL_1PCT,
    })
}

/// `P(K > x)` for the Kolmogorov distribution.
pub fn kolmogorov_tail(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * x * x).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// Output bits per tag relative to the source entropy: `N_bit / (N_tag · H)`.
pub fn extraction_efficiency(n_bits_out: u64, n_tags: u64, h_exp: f64) -> Result<f64> {
    if n_tags == 0 || h_exp.is_nan() || h_exp <= 0.0 {
        return Err(Error::InvalidArgument(
            "efficiency needs at least one tag and positive entropy".into(),
        ));
    }
    Ok(n_bits_out as f64 / (n_tags as f64 * h_exp))
}

/// Array bit-rate summary.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    pub n_pixels: usize,
    pub n_kept: usize,
    pub wall_time: f64,
    pub coarse_bits: u64,
    pub fine_bits: u64,
    /// bit/s.
    pub coarse_rate: f64,
    pub fine_rate: f64,
    pub total_rate: f64,
    /// Totals spread over every pixel of the array.
    pub coarse_per_pixel: f64,
    pub fine_per_pixel: f64,
    /// Coarse rate of an average kept pixel.
    pub coarse_per_kept_pixel: f64,
}

/// Turns bit totals over `wall_time` seconds into rates.
pub fn aggregate_rates(
    coarse_bits: u64,
    fine_bits: u64,
    wall_time: f64,
    n_pixels: usize,
    n_kept: usize,
) -> RateSummary {
    let rate = |bits: u64| if wall_time > 0.0 { bits as f64 / wall_time } else { 0.0 };
    let per = |r: f64, n: usize| if n > 0 { r / n as f64 } else { 0.0 };
    let coarse_rate = rate(coarse_bits);
    let fine_rate = rate(fine_bits);
    RateSummary {
        n_pixels,
        n_kept,
        wall_time,
        coarse_bits,
        fine_bits,
        coarse_rate,
        fine_rate,
        total_rate: coarse_rate + fine_rate,
        coarse_per_pixel: per(coarse_rate, n_pixels),
        fine_per_pixel: per(fine_rate, n_pixels),
        coarse_per_kept_pixel: per(coarse_rate, n_kept),
    }
}
