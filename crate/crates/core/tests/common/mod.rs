#![allow(dead_code)]

use qrng_core::BitBuf;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Straight transcription of the recursion on `Vec<bool>`: the unequal-pair
/// bits, then the XOR branch, then the equal-pair branch.
pub fn reference_peres(bits: &[bool], depth: u32) -> Vec<bool> {
    if depth == 0 || bits.len() < 2 {
        return Vec::new();
    }
    let mut n = Vec::new();
    let mut u = Vec::new();
    let mut v = Vec::new();
    for pair in bits.chunks_exact(2) {
        let (a, b) = (pair[0], pair[1]);
        u.push(a != b);
        if a != b {
            n.push(a);
        } else {
            v.push(b);
        }
    }
    n.extend(reference_peres(&u, depth - 1));
    n.extend(reference_peres(&v, depth - 1));
    n
}

pub fn bools(bits: &BitBuf) -> Vec<bool> {
    bits.iter().collect()
}

/// The low `len` bits of `x`, least significant first.
pub fn bits_of(x: u64, len: usize) -> Vec<bool> {
    (0..len).map(|i| x >> i & 1 == 1).collect()
}

pub fn bernoulli(n: usize, p: f64, seed: u64) -> BitBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_bool(p)).collect()
}
