use rayon::prelude::*;

use crate::bits::BitBuf;

use super::{peres, ExtractorStats, SymbolStream};

/// Bits needed to write any symbol of the alphabet: `⌈log2 n⌉`.
pub fn symbol_bits(alphabet_size: u32) -> u32 {
    32 - (alphabet_size.max(2) - 1).leading_zeros()
}

/// Extracts unbiased bits from i.i.d. symbols over a finite alphabet.
///
/// Each symbol is written MSB-first with `b = ⌈log2 n⌉` bits. The bit at
/// position `i` goes to the sequence keyed by the `i` bits above it, so
/// each sequence is i.i.d. given its prefix. Every non-empty sequence is
/// run through [`peres`] and the results are concatenated position-major,
/// prefixes ascending.
pub fn zhou_bruck(symbols: &SymbolStream, max_depth: u32) -> (BitBuf, ExtractorStats) {
    let b = symbol_bits(symbols.alphabet_size());
    let sequences = prefix_sequences(symbols.symbols(), b);
    let parts: Vec<(BitBuf, ExtractorStats)> = sequences
        .par_iter()
        .map(|s| {
            if s.is_empty() {
                (BitBuf::new(), ExtractorStats::default())
            } else {
                peres(s, max_depth)
            }
        })
        .collect();
    let mut out = BitBuf::new();
    let mut stats = ExtractorStats::default();
    for (bits, s) in &parts {
        out.extend_from(bits);
        stats.absorb(s);
    }
    stats.input_len = symbols.len() as u64 * b as u64;
    stats.output_len = out.len() as u64;
    (out, stats)
}

/// Splits symbols into the `2^b − 1` prefix-keyed bit sequences.
/// Sequence `2^i − 1 + prefix` holds bit `i` (from the top) of every
/// symbol whose top `i` bits equal `prefix`.
pub fn prefix_sequences(symbols: &[u32], b: u32) -> Vec<BitBuf> {
    let mut seqs = vec![BitBuf::new(); (1usize << b) - 1];
    for &s in symbols {
        for i in 0..b {
            let prefix = (s >> (b - i)) as usize;
            let bit = (s >> (b - 1 - i)) & 1 == 1;
            seqs[(1usize << i) - 1 + prefix].push(bit);
        }
    }
    seqs
}
