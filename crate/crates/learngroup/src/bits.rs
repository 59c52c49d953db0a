//! Fixed-width bitvectors.
//!
//! A `Bitvector` is one row of a mask matrix: bit `j` tells whether weight
//! column `j` survives. The encoder caches these, the allocator reads
//! non-zero positions out of them, and the dump formats serialize them as
//! binary or hex text.

use crate::error::{Error, Result};

const WORD_BITS: usize = 64;

/// A fixed-length vector of bits, packed into `u64` words.
///
/// Bit order inside a word is little-endian (bit `j` lives in word `j / 64`
/// at position `j % 64`); text encodings read bit 0 first.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Bitvector {
    len: usize,
    words: Vec<u64>,
}

impl Bitvector {
    /// All-zero bitvector of `len` bits.
    pub fn zeros(len: usize) -> Self {
        Bitvector {
            len,
            words: vec![0; len.div_ceil(WORD_BITS)],
        }
    }

    /// All-one bitvector of `len` bits.
    pub fn ones(len: usize) -> Self {
        let mut bv = Bitvector::zeros(len);
        for w in &mut bv.words {
            *w = u64::MAX;
        }
        bv.clear_pad();
        bv
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, idx: usize) -> bool {
        debug_assert!(idx < self.len);
        self.words[idx / WORD_BITS] >> (idx % WORD_BITS) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, idx: usize, value: bool) {
        debug_assert!(idx < self.len);
        let mask = 1u64 << (idx % WORD_BITS);
        if value {
            self.words[idx / WORD_BITS] |= mask;
        } else {
            self.words[idx / WORD_BITS] &= !mask;
        }
    }

    /// Number of set bits. This is the row's workload.
    pub fn popcount(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Ascending positions of the set bits.
    pub fn ones_positions(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.popcount());
        for (wi, &word) in self.words.iter().enumerate() {
            let mut w = word;
            while w != 0 {
                let b = w.trailing_zeros() as usize;
                out.push(wi * WORD_BITS + b);
                w &= w - 1;
            }
        }
        out
    }

    /// ASCII `'0'`/`'1'` string, bit 0 first.
    pub fn to_bit_string(&self) -> String {
        (0..self.len)
            .map(|i| if self.get(i) { '1' } else { '0' })
            .collect()
    }

    /// Parse an ASCII `'0'`/`'1'` string, bit 0 first.
    pub fn from_bit_str(s: &str) -> Result<Self> {
        let mut bv = Bitvector::zeros(s.len());
        for (i, c) in s.bytes().enumerate() {
            match c {
                b'0' => {}
                b'1' => bv.set(i, true),
                _ => {
                    return Err(Error::parse(
                        0,
                        format!("invalid bit character {:?}", c as char),
                    ))
                }
            }
        }
        Ok(bv)
    }

    /// Hex encoding: one nibble per four bits, bit 0 in the most significant
    /// position of the first nibble, trailing pad bits zero.
    pub fn to_hex_string(&self) -> String {
        let mut out = String::with_capacity(self.len.div_ceil(4));
        for nib in 0..self.len.div_ceil(4) {
            let mut v = 0u8;
            for k in 0..4 {
                let idx = nib * 4 + k;
                if idx < self.len && self.get(idx) {
                    v |= 1 << (3 - k);
                }
            }
            out.push(char::from_digit(v as u32, 16).unwrap());
        }
        out
    }

    /// Parse the hex encoding produced by [`to_hex_string`] for a known bit
    /// length. Rejects wrong digit counts and non-zero pad bits.
    ///
    /// [`to_hex_string`]: Bitvector::to_hex_string
    pub fn from_hex_str(len: usize, s: &str) -> Result<Self> {
        let want = len.div_ceil(4);
        if s.len() != want {
            return Err(Error::parse(
                0,
                format!("expected {want} hex digits for {len} bits, got {}", s.len()),
            ));
        }
        let mut bv = Bitvector::zeros(len);
        for (nib, c) in s.chars().enumerate() {
            let v = c
                .to_digit(16)
                .ok_or_else(|| Error::parse(0, format!("invalid hex digit {c:?}")))?
                as u8;
            for k in 0..4 {
                let idx = nib * 4 + k;
                let bit = v >> (3 - k) & 1 == 1;
                if idx < len {
                    bv.set(idx, bit);
                } else if bit {
                    return Err(Error::parse(0, "non-zero pad bits".to_string()));
                }
            }
        }
        Ok(bv)
    }

    fn clear_pad(&mut self) {
        let used = self.len % WORD_BITS;
        if used != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << used) - 1;
            }
        }
    }
}
