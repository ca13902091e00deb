//! Fixed-width bit packing (MSB first), used when entropy coding is disabled.

use crate::error::{Error, Result};

#[derive(Debug, Default, Clone)]
pub struct BitWriter {
    out: Vec<u8>,
    acc: u64,
    nacc: u32,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put(&mut self, value: u64, nbits: u32) {
        debug_assert!(nbits <= 32 && (nbits == 64 || value >> nbits == 0));
        self.acc = (self.acc << nbits) | value;
        self.nacc += nbits;
        while self.nacc >= 8 {
            self.nacc -= 8;
            self.out.push((self.acc >> self.nacc) as u8);
        }
        self.acc &= (1u64 << self.nacc) - 1;
    }

    pub fn finish(mut self) -> Vec<u8> {
        if self.nacc > 0 {
            self.out.push((self.acc << (8 - self.nacc)) as u8);
        }
        self.out
    }
}

#[derive(Debug, Clone)]
pub struct BitReader<'a> {
    input: &'a [u8],
    bitpos: usize,
}

impl<'a> BitReader<'a> {
    pub fn new(input: &'a [u8]) -> Self {
        BitReader { input, bitpos: 0 }
    }

    pub fn get(&mut self, nbits: u32) -> Result<u64> {
        if self.bitpos + nbits as usize > self.input.len() * 8 {
            return Err(Error::corrupt("fixed-length payload truncated"));
        }
        let mut v = 0u64;
        for _ in 0..nbits {
            let byte = self.input[self.bitpos / 8];
            let bit = (byte >> (7 - self.bitpos % 8)) & 1;
            v = (v << 1) | bit as u64;
            self.bitpos += 1;
        }
        Ok(v)
    }
}

/// Bits needed to index `n` distinct values (0 for n ≤ 1).
pub fn bits_for(n: u64) -> u32 {
    if n <= 1 {
        0
    } else {
        64 - (n - 1).leading_zeros()
    }
}
