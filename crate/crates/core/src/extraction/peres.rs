use crate::bits::BitBuf;

use super::kernel::{split_pairs, Want};
use super::ExtractorStats;

/// Inputs longer than this recurse into U and V on separate threads.
const PARALLEL_MIN_BITS: usize = 1 << 22;

/// Default recursion cap; deeper than any practical input needs.
pub const DEFAULT_MAX_DEPTH: u32 = 32;

/// Von Neumann debiasing: 01 → 0, 10 → 1, equal pairs and a trailing odd bit dropped.
pub fn von_neumann(bits: &BitBuf) -> BitBuf {
    split_pairs(bits, Want { u: false, v: false }).0
}

/// Iterated von Neumann extraction:
/// `Ψ(s) = Ψ_N(s) ‖ Ψ(Ψ_U(s)) ‖ Ψ(Ψ_V(s))`.
///
/// `max_depth = 1` is plain von Neumann. Recursion also stops when a
/// sequence is shorter than two bits or constant (a constant sequence has
/// an empty extraction at every depth).
pub fn peres(bits: &BitBuf, max_depth: u32) -> (BitBuf, ExtractorStats) {
    let mut stats = ExtractorStats {
        input_len: bits.len() as u64,
        ..Default::default()
    };
    if max_depth == 0 || bits.len() < 2 || is_constant(bits) {
        return (BitBuf::new(), stats);
    }
    let (n, u, v) = split_pairs(
        bits,
        Want {
            u: max_depth > 1,
            v: max_depth > 1,
        },
    );
    stats.depth_reached = 1;
    let mut out = n;
    stats.n_bits = out.len() as u64;
    if max_depth > 1 {
        let ((u_out, du), (v_out, dv)) = branches(&u, &v, max_depth - 1);
        drop((u, v));
        stats.u_bits = u_out.len() as u64;
        stats.v_bits = v_out.len() as u64;
        stats.depth_reached = 1 + du.max(dv);
        out.extend_from(&u_out);
        out.extend_from(&v_out);
    }
    stats.output_len = out.len() as u64;
    (out, stats)
}

type Branch = (BitBuf, u32);

fn branches(u: &BitBuf, v: &BitBuf, depth: u32) -> (Branch, Branch) {
    let run = |s: &BitBuf| {
        let mut out = BitBuf::new();
        let d = psi(s, depth, &mut out);
        (out, d)
    };
    if u.len() + v.len() >= PARALLEL_MIN_BITS {
        rayon::join(|| run(u), || run(v))
    } else {
        (run(u), run(v))
    }
}

/// Appends Ψ(bits) to `out`; returns the depth reached.
fn psi(bits: &BitBuf, depth: u32, out: &mut BitBuf) -> u32 {
    if depth == 0 || bits.len() < 2 || is_constant(bits) {
        return 0;
    }
    let deeper = depth > 1;
    let (n, u, v) = split_pairs(bits, Want { u: deeper, v: deeper });
    out.extend_from(&n);
    if !deeper {
        return 1;
    }
    if u.len() + v.len() >= PARALLEL_MIN_BITS {
        let ((u_out, du), (v_out, dv)) = branches(&u, &v, depth - 1);
        out.extend_from(&u_out);
        out.extend_from(&v_out);
        1 + du.max(dv)
    } else {
        let du = psi(&u, depth - 1, out);
        drop(u);
        let dv = psi(&v, depth - 1, out);
        1 + du.max(dv)
    }
}

fn is_constant(bits: &BitBuf) -> bool {
    let ones = bits.count_ones();
    ones == 0 || ones == bits.len()
}
