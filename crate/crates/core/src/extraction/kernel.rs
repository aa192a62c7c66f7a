//! Word-level pair splitting shared by the von Neumann and Peres extractors.

use crate::bits::BitBuf;

const EVEN: u64 = 0x5555_5555_5555_5555;

/// Gathers the even-indexed bits of `x` into the low 32 bits.
#[inline]
pub(crate) fn even_bits(x: u64) -> u64 {
    let mut x = x & EVEN;
    x = (x | (x >> 1)) & 0x3333_3333_3333_3333;
    x = (x | (x >> 2)) & 0x0F0F_0F0F_0F0F_0F0F;
    x = (x | (x >> 4)) & 0x00FF_00FF_00FF_00FF;
    x = (x | (x >> 8)) & 0x0000_FFFF_0000_FFFF;
    (x | (x >> 16)) & 0x0000_0000_FFFF_FFFF
}

/// Packs the bits of `x` selected by `m` into the low bits, in order.
///
/// Portable version of the x86 `pext` instruction (Hacker's Delight §7-4).
#[inline]
pub(crate) fn compress_soft(x: u64, m: u64) -> u64 {
    let mut x = x & m;
    let mut m = m;
    let mut mk = !m << 1;
    for i in 0..6 {
        let mut mp = mk ^ (mk << 1);
        mp ^= mp << 2;
        mp ^= mp << 4;
        mp ^= mp << 8;
        mp ^= mp << 16;
        mp ^= mp << 32;
        let mv = mp & m;
        m = (m ^ mv) | (mv >> (1 << i));
        let t = x & mv;
        x = (x ^ t) | (t >> (1 << i));
        mk &= !mp;
    }
    x
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "bmi2")]
unsafe fn compress_bmi2(x: u64, m: u64) -> u64 {
    std::arch::x86_64::_pext_u64(x, m)
}

#[inline]
pub(crate) fn compress(x: u64, m: u64) -> u64 {
    #[cfg(target_arch = "x86_64")]
    {
        if has_bmi2() {
            // SAFETY: the CPU supports BMI2, checked at run time.
            return unsafe { compress_bmi2(x, m) };
        }
    }
    compress_soft(x, m)
}

#[cfg(target_arch = "x86_64")]
fn has_bmi2() -> bool {
    use std::sync::OnceLock;
    static BMI2: OnceLock<bool> = OnceLock::new();
    *BMI2.get_or_init(|| std::arch::is_x86_feature_detected!("bmi2"))
}

/// Which pair-derived sequences to build.
#[derive(Clone, Copy)]
pub(crate) struct Want {
    pub u: bool,
    pub v: bool,
}

/// Splits `bits` into non-overlapping pairs and emits
/// N: the first bit of every unequal pair (01 → 0, 10 → 1),
/// U: the XOR of every pair,
/// V: the shared value of every equal pair.
/// A trailing odd bit is ignored.
pub(crate) fn split_pairs(bits: &BitBuf, want: Want) -> (BitBuf, BitBuf, BitBuf) {
    let pairs = bits.len() / 2;
    let mut n = BitBuf::new();
    let mut u = BitBuf::with_capacity(if want.u { pairs } else { 0 });
    let mut v = BitBuf::with_capacity(if want.v { pairs } else { 0 });
    let words = bits.words();
    for (i, &w) in words.iter().enumerate() {
        let k = (pairs - i * 32).min(32) as u32;
        if k == 0 {
            break;
        }
        let valid = if k == 32 { u32::MAX as u64 } else { (1u64 << k) - 1 };
        let first = even_bits(w);
        let xor = even_bits(w ^ (w >> 1)) & valid;
        let diff = xor;
        let same = !xor & valid;
        if diff != 0 {
            n.push_bits(compress(first, diff), diff.count_ones());
        }
        if want.u {
            u.push_bits(xor, k);
        }
        if want.v {
            let ones = first & same;
            let n_same = same.count_ones();
            if ones == 0 {
                v.push_zeros(n_same as usize);
            } else if ones == same {
                push_ones(&mut v, n_same);
            } else {
                v.push_bits(compress(first, same), n_same);
            }
        }
    }
    (n, u, v)
}

fn push_ones(buf: &mut BitBuf, n: u32) {
    if n > 0 {
        buf.push_bits(u64::MAX, n);
    }
}
