//! Packed bit strings.
//!
//! [`BitBuf`] stores bits LSB-first inside `u64` words: bit `i` lives in word
//! `i / 64` at position `i % 64`. Serialised little-endian, this is the same
//! layout as LSB-first packed bytes, which is what the on-disk formats use.

use std::fmt;
use std::str::FromStr;

use crate::error::Error;

const WORD: usize = 64;

#[derive(Clone, Default, PartialEq, Eq)]
pub struct BitBuf {
    words: Vec<u64>,
    len: usize,
}

impl BitBuf {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(bits: usize) -> Self {
        Self {
            words: Vec::with_capacity(bits.div_ceil(WORD)),
            len: 0,
        }
    }

    /// An all-zero string of `len` bits.
    pub fn zeros(len: usize) -> Self {
        Self {
            words: vec![0; len.div_ceil(WORD)],
            len,
        }
    }

    pub fn from_bools<I: IntoIterator<Item = bool>>(bits: I) -> Self {
        let mut buf = Self::new();
        for b in bits {
            buf.push(b);
        }
        buf
    }

    /// Rebuilds a string from LSB-first packed bytes. Bits beyond `len` are ignored.
    pub fn from_bytes(bytes: &[u8], len: usize) -> Result<Self, Error> {
        if bytes.len() < len.div_ceil(8) {
            return Err(Error::Format(format!(
                "bit payload holds {} bytes, {} bits need {}",
                bytes.len(),
                len,
                len.div_ceil(8)
            )));
        }
        let mut words = vec![0u64; len.div_ceil(WORD)];
        for (i, chunk) in bytes[..len.div_ceil(8)].chunks(8).enumerate() {
            let mut le = [0u8; 8];
            le[..chunk.len()].copy_from_slice(chunk);
            words[i] = u64::from_le_bytes(le);
        }
        let mut buf = Self { words, len };
        buf.clear_tail();
        Ok(buf)
    }

    /// LSB-first packed bytes, `ceil(len / 8)` of them.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.len.div_ceil(8));
        for w in &self.words {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out.truncate(self.len.div_ceil(8));
        out
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Backing words. Bits past `len` in the last word are always zero.
    #[inline]
    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        (self.words[i / WORD] >> (i % WORD)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, value: bool) {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        let mask = 1u64 << (i % WORD);
        if value {
            self.words[i / WORD] |= mask;
        } else {
            self.words[i / WORD] &= !mask;
        }
    }

    #[inline]
    pub fn push(&mut self, bit: bool) {
        self.push_bits(bit as u64, 1);
    }

    /// Appends the low `n` bits of `value`, least significant first.
    #[inline]
    pub fn push_bits(&mut self, value: u64, n: u32) {
        if n == 0 {
            return;
        }
        debug_assert!(n <= 64);
        let value = if n == 64 { value } else { value & ((1u64 << n) - 1) };
        let offset = self.len % WORD;
        if offset == 0 {
            self.words.push(value);
        } else {
            *self.words.last_mut().expect("offset > 0 implies a word") |= value << offset;
            if offset + n as usize > WORD {
                self.words.push(value >> (WORD - offset));
            }
        }
        self.len += n as usize;
    }

    pub fn push_zeros(&mut self, n: usize) {
        self.len += n;
        self.words.resize(self.len.div_ceil(WORD), 0);
    }

    /// Appends `other` in order.
    pub fn extend_from(&mut self, other: &BitBuf) {
        let full = other.len / WORD;
        for &w in &other.words[..full] {
            self.push_bits(w, 64);
        }
        let rest = (other.len % WORD) as u32;
        if rest > 0 {
            self.push_bits(other.words[full], rest);
        }
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| (self.words[i / WORD] >> (i % WORD)) & 1 == 1)
    }

    /// Positions of the set bits, ascending.
    pub fn iter_ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut rest = w;
            std::iter::from_fn(move || {
                if rest == 0 {
                    None
                } else {
                    let tz = rest.trailing_zeros() as usize;
                    rest &= rest - 1;
                    Some(wi * WORD + tz)
                }
            })
        })
    }

    /// The 64 bits starting at `start`, zero-padded past the end.
    #[inline]
    pub fn word_at(&self, start: usize) -> u64 {
        let wi = start / WORD;
        let off = start % WORD;
        let lo = self.words.get(wi).copied().unwrap_or(0);
        if off == 0 {
            lo
        } else {
            let hi = self.words.get(wi + 1).copied().unwrap_or(0);
            (lo >> off) | (hi << (WORD - off))
        }
    }

    fn clear_tail(&mut self) {
        let rest = self.len % WORD;
        if rest > 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << rest) - 1;
            }
        }
    }
}

impl fmt::Display for BitBuf {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.iter() {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for BitBuf {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.len <= 128 {
            write!(f, "BitBuf(\"{self}\")")
        } else {
            write!(f, "BitBuf {{ len: {}, ones: {} }}", self.len, self.count_ones())
        }
    }
}

impl FromStr for BitBuf {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut buf = BitBuf::with_capacity(s.len());
        for c in s.chars() {
            match c {
                '0' => buf.push(false),
                '1' => buf.push(true),
                '_' | ' ' => {}
                other => return Err(Error::Format(format!("invalid bit character {other:?}"))),
            }
        }
        Ok(buf)
    }
}

impl FromIterator<bool> for BitBuf {
    fn from_iter<I: IntoIterator<Item = bool>>(iter: I) -> Self {
        Self::from_bools(iter)
    }
}
