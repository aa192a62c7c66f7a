mod common;

use common::{bernoulli, bits_of, bools, reference_peres};
use proptest::prelude::*;
use qrng_core::extraction::{
    peres, prefix_sequences, protocol_diff, protocol_odeven, symbol_bits, von_neumann, zhou_bruck, SymbolStream,
};
use qrng_core::source::{gen_poisson_arrivals, PhotonEventStream, SimConfig};
use qrng_core::BitBuf;

fn parse(s: &str) -> BitBuf {
    s.parse().unwrap()
}

#[test]
fn hand_traced_examples() {
    assert_eq!(von_neumann(&parse("0011")).to_string(), "");
    assert_eq!(von_neumann(&parse("0110")).to_string(), "01");
    assert_eq!(von_neumann(&parse("01101")).to_string(), "01");
    assert_eq!(peres(&parse("0011"), 32).0.to_string(), "0");
    assert_eq!(peres(&parse(""), 32).0.to_string(), "");
    assert_eq!(peres(&parse("0"), 32).0.to_string(), "");
}

#[test]
fn peres_matches_reference_on_every_short_input() {
    for len in 0..=16usize {
        for x in 0..1u64 << len {
            let input = bits_of(x, len);
            let got = peres(&BitBuf::from_bools(input.iter().copied()), 32).0;
            assert_eq!(bools(&got), reference_peres(&input, 32), "input {x:0len$b}");
        }
    }
}

#[test]
fn depth_limited_peres_matches_reference() {
    for depth in 1..=5u32 {
        for len in 0..=12usize {
            for x in 0..1u64 << len {
                let input = bits_of(x, len);
                let got = peres(&BitBuf::from_bools(input.iter().copied()), depth).0;
                assert_eq!(bools(&got), reference_peres(&input, depth));
            }
        }
    }
}

#[test]
fn von_neumann_yield_is_p_times_one_minus_p_per_pair() {
    let (n, p) = (2_000_000, 0.3);
    let out = von_neumann(&bernoulli(n, p, 17));
    let pairs = (n / 2) as f64;
    let q = 2.0 * p * (1.0 - p);
    let sd = (pairs * q * (1.0 - q)).sqrt();
    assert!((out.len() as f64 - pairs * q).abs() < 4.0 * sd, "{}", out.len());
}

#[test]
fn long_biased_input_matches_reference() {
    let input = bernoulli(200_000, 0.1, 9);
    let (out, stats) = peres(&input, 32);
    assert_eq!(bools(&out), reference_peres(&bools(&input), 32));
    assert_eq!(stats.output_len as usize, out.len());
    assert_eq!(stats.input_len as usize, input.len());
    assert_eq!(stats.n_bits + stats.u_bits + stats.v_bits, stats.output_len);
}

#[test]
fn zhou_bruck_binary_alphabet_is_peres() {
    let bits = bernoulli(10_000, 0.3, 4);
    let syms = SymbolStream::new(bits.iter().map(u32::from).collect(), 2).unwrap();
    assert_eq!(zhou_bruck(&syms, 32).0, peres(&bits, 32).0);
}

#[test]
fn zhou_bruck_rejects_bad_symbols() {
    assert!(SymbolStream::new(vec![3, 140], 140).is_err());
    assert!(SymbolStream::new(vec![0, 0], 1).is_err());
    let (out, _) = zhou_bruck(&SymbolStream::new(vec![42; 500], 140).unwrap(), 32);
    assert!(out.is_empty());
}

#[test]
fn diff_protocol_examples() {
    let s = |ev: Vec<u64>| PhotonEventStream::new(ev, 1e-9, 100).unwrap();
    assert_eq!(protocol_diff(&s(vec![0, 10, 15])).to_string(), "0");
    assert_eq!(protocol_diff(&s(vec![0, 5, 10])).to_string(), "");
    assert_eq!(protocol_diff(&s(vec![0, 10])).to_string(), "");
    assert_eq!(protocol_diff(&s(vec![0, 10, 15, 17, 30])).to_string(), "01");
}

#[test]
fn odeven_protocol_examples() {
    let s = PhotonEventStream::new(vec![3, 12, 14, 25, 26, 27], 1e-9, 45).unwrap();
    assert_eq!(protocol_odeven(&s, 10).unwrap().to_string(), "1010");
    assert_eq!(
        protocol_odeven(&PhotonEventStream::empty(1e-9, 30), 10)
            .unwrap()
            .to_string(),
        "000"
    );
    assert!(protocol_odeven(&s, 0).is_err());
}

/// `P(odd) − 1/2` of a Poisson count with mean `mu`, summed term by term.
fn parity_bias(mu: f64) -> f64 {
    let mut term = (-mu).exp();
    let mut odd = 0.0;
    for k in 1..400 {
        term *= mu / k as f64;
        if k % 2 == 1 {
            odd += term;
        }
    }
    odd - 0.5
}

#[test]
fn odeven_bias_closed_form() {
    let b = parity_bias(10.0);
    let closed = (-20f64).exp() / 2.0;
    assert!((b.abs() - closed).abs() < 1e-12, "{b} vs {closed}");

    // Monte Carlo at a mean count of 0.5, where the bias is large.
    let mu = 0.5;
    let cfg = SimConfig {
        photon_rate: 1e6,
        duration: 0.2,
        tick: 1e-9,
        seed: 23,
    };
    let stream = gen_poisson_arrivals(&cfg).unwrap();
    let bits = protocol_odeven(&stream, (mu / 1e6 / 1e-9) as u64).unwrap();
    let n = bits.len() as f64;
    let frac = bits.count_ones() as f64 / n;
    let expected = 0.5 + parity_bias(mu);
    assert!((frac - expected).abs() < 4.0 * (expected * (1.0 - expected) / n).sqrt());
    assert!((parity_bias(mu) + (-2.0 * mu).exp() / 2.0).abs() < 1e-12);
}

proptest! {
    #[test]
    fn peres_output_starts_with_von_neumann(bits in proptest::collection::vec(any::<bool>(), 0..500), depth in 1u32..40) {
        let b = BitBuf::from_bools(bits);
        let vn = von_neumann(&b);
        let (out, _) = peres(&b, depth);
        prop_assert!(out.len() >= vn.len());
        prop_assert!((0..vn.len()).all(|i| out.get(i) == vn.get(i)));
    }

    #[test]
    fn yield_grows_with_depth(bits in proptest::collection::vec(any::<bool>(), 0..500), depth in 1u32..20) {
        let b = BitBuf::from_bools(bits);
        let shallow = peres(&b, depth).0.len();
        let deep = peres(&b, depth + 1).0.len();
        prop_assert!(shallow <= deep);
        prop_assert!(deep <= b.len());
    }

    #[test]
    fn peres_matches_reference_on_random_inputs(bits in proptest::collection::vec(any::<bool>(), 0..3000), depth in 1u32..40) {
        let got = peres(&BitBuf::from_bools(bits.iter().copied()), depth).0;
        prop_assert_eq!(bools(&got), reference_peres(&bits, depth));
    }

    #[test]
    fn zhou_bruck_sequences_conserve_bits(n in 2u32..300, symbols in proptest::collection::vec(any::<u32>(), 0..400)) {
        let symbols: Vec<u32> = symbols.into_iter().map(|s| s % n).collect();
        let b = symbol_bits(n);
        prop_assert!(1u64 << b >= n as u64 && (b == 1 || 1u64 << (b - 1) < n as u64));
        let seqs = prefix_sequences(&symbols, b);
        prop_assert_eq!(seqs.len(), (1usize << b) - 1);
        prop_assert_eq!(seqs.iter().map(BitBuf::len).sum::<usize>(), b as usize * symbols.len());
    }

    #[test]
    fn zhou_bruck_is_peres_per_prefix_sequence(n in 2u32..40, symbols in proptest::collection::vec(any::<u32>(), 0..600)) {
        let symbols: Vec<u32> = symbols.into_iter().map(|s| s % n).collect();
        let b = symbol_bits(n);
        // Sequence for bit i under prefix `pre`, built symbol by symbol.
        let mut expected = Vec::new();
        for i in 0..b {
            for pre in 0..1u32 << i {
                let seq: Vec<bool> = symbols
                    .iter()
                    .filter(|&&s| s >> (b - i) == pre)
                    .map(|&s| s >> (b - 1 - i) & 1 == 1)
                    .collect();
                expected.extend(reference_peres(&seq, 32));
            }
        }
        let (out, stats) = zhou_bruck(&SymbolStream::new(symbols.clone(), n).unwrap(), 32);
        prop_assert_eq!(bools(&out), expected);
        prop_assert_eq!(stats.input_len, b as u64 * symbols.len() as u64);
    }
}
