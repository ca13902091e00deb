//! Byte-oriented range coder with 16-bit frequency tables.
//!
//! State is a 56-bit window (`low`, `range`) held in u64 with carry propagation
//! through a cached byte and a run of pending 0xFF bytes. `range` stays in
//! `[2^48, 2^56)` after renormalization, so the per-symbol truncation loss is
//! below 2^-32 relative. The final flush emits the shortest byte string that
//! identifies the interval; the decoder reads zeros past the end of input.

use crate::error::{Error, Result};

pub const PROB_BITS: u32 = 16;
pub const PROB_TOTAL: u32 = 1 << PROB_BITS;

const WINDOW_BITS: u32 = 56;
const WINDOW_MASK: u64 = (1 << WINDOW_BITS) - 1;
const BOT: u64 = 1 << 48;
const SHIFT: u32 = WINDOW_BITS - 8;

/// A cumulative frequency table over an alphabet `0..n` with total `2^16`.
/// `cum[s]..cum[s+1]` is the interval of symbol `s`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cdf {
    cum: Vec<u32>,
}

impl Cdf {
    pub fn new(cum: Vec<u32>) -> Result<Self> {
        if cum.len() < 2 {
            return Err(Error::CdfInvalid("alphabet must have at least one symbol".into()));
        }
        if cum[0] != 0 || *cum.last().unwrap() != PROB_TOTAL {
            return Err(Error::CdfInvalid(format!(
                "cdf must run from 0 to {PROB_TOTAL}, got {}..{}",
                cum[0],
                cum.last().unwrap()
            )));
        }
        if let Some(k) = cum.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::CdfInvalid(format!("zero-width or decreasing bin at symbol {k}")));
        }
        Ok(Cdf { cum })
    }

    /// Build from integer frequencies that already sum to `2^16`, each ≥ 1.
    pub fn from_freqs(freqs: &[u32]) -> Result<Self> {
        let mut cum = Vec::with_capacity(freqs.len() + 1);
        let mut acc = 0u32;
        cum.push(0);
        for &f in freqs {
            acc = acc
                .checked_add(f)
                .ok_or_else(|| Error::CdfInvalid("frequency overflow".into()))?;
            cum.push(acc);
        }
        Cdf::new(cum)
    }

    /// Quantize a probability vector to a valid table: every symbol gets width ≥ 1,
    /// rounding surplus/deficit is settled on the widest bins in index order.
    pub fn from_probs(probs: &[f64]) -> Result<Self> {
        let n = probs.len();
        if n == 0 || n > PROB_TOTAL as usize {
            return Err(Error::CdfInvalid(format!("alphabet size {n} not codable")));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::CdfInvalid("probabilities must be finite and non-negative".into()));
        }
        let total: f64 = probs.iter().sum();
        if total <= 0.0 {
            return Err(Error::CdfInvalid("probabilities sum to zero".into()));
        }
        let mut w: Vec<i64> = probs
            .iter()
            .map(|p| ((p / total) * PROB_TOTAL as f64).round().max(1.0) as i64)
            .collect();
        let mut diff = PROB_TOTAL as i64 - w.iter().sum::<i64>();
        if diff != 0 {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| w[b].cmp(&w[a]).then(a.cmp(&b)));
            if diff > 0 {
                w[order[0]] += diff;
            } else {
                while diff < 0 {
                    let mut moved = false;
                    for &k in &order {
                        if diff == 0 {
                            break;
                        }
                        if w[k] > 1 {
                            w[k] -= 1;
                            diff += 1;
                            moved = true;
                        }
                    }
                    if !moved {
                        return Err(Error::CdfInvalid("cannot fit alphabet into table".into()));
                    }
                }
            }
        }
        Cdf::from_freqs(&w.into_iter().map(|x| x as u32).collect::<Vec<_>>())
    }

    pub fn uniform(n: usize) -> Result<Self> {
        Cdf::from_probs(&vec![1.0; n])
    }

    pub fn num_symbols(&self) -> usize {
        self.cum.len() - 1
    }

    #[inline]
    pub fn interval(&self, s: usize) -> (u32, u32) {
        (self.cum[s], self.cum[s + 1] - self.cum[s])
    }

    pub fn prob(&self, s: usize) -> f64 {
        let (_, f) = self.interval(s);
        f as f64 / PROB_TOTAL as f64
    }

    /// Symbol whose interval contains `target` (< 2^16).
    fn find(&self, target: u32) -> usize {
        // cum is strictly increasing; largest s with cum[s] <= target
        self.cum.partition_point(|&c| c <= target) - 1
    }
}

#[derive(Debug, Clone)]
pub struct RangeEncoder {
    low: u64,
    range: u64,
    cache: u8,
    pending: u64,
    started: bool,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        RangeEncoder { low: 0, range: WINDOW_MASK, cache: 0, pending: 0, started: false, out: Vec::new() }
    }

    fn shift_low(&mut self) {
        let carry = (self.low >> WINDOW_BITS) as u8;
        let top = ((self.low >> SHIFT) & 0xff) as u8;
        if top != 0xff || carry != 0 {
            if self.started {
                self.out.push(self.cache.wrapping_add(carry));
            }
            for _ in 0..self.pending {
                self.out.push(0xffu8.wrapping_add(carry));
            }
            self.pending = 0;
            self.cache = top;
            self.started = true;
        } else {
            self.pending += 1;
        }
        self.low = (self.low << 8) & WINDOW_MASK;
    }

    /// Encode an interval `[cum, cum+freq)` out of a total of `2^bits`.
    #[inline]
    pub fn encode_interval(&mut self, cum: u32, freq: u32, bits: u32) {
        debug_assert!(freq > 0 && cum + freq <= 1 << bits);
        let r = self.range >> bits;
        self.low += r * cum as u64;
        if cum + freq == 1 << bits {
            // last symbol absorbs the truncation remainder
            self.range -= r * cum as u64;
        } else {
            self.range = r * freq as u64;
        }
        while self.range < BOT {
            self.range <<= 8;
            self.shift_low();
        }
    }

    pub fn encode(&mut self, cdf: &Cdf, symbol: usize) {
        let (c, f) = cdf.interval(symbol);
        self.encode_interval(c, f, PROB_BITS);
    }

    /// Encode `nbits` (≤ 16) raw bits with uniform probability.
    pub fn encode_bits(&mut self, value: u32, nbits: u32) {
        debug_assert!(nbits <= 16 && (nbits == 32 || value < (1 << nbits)));
        if nbits == 0 {
            return;
        }
        self.encode_interval(value, 1, nbits);
    }

    pub fn finish(mut self) -> Vec<u8> {
        // pick the value in [low, low+range) with the most trailing zero bits
        let mut chosen = None;
        for z in (0..=WINDOW_BITS).rev() {
            let mask = if z == 64 { u64::MAX } else { (1u64 << z) - 1 };
            let v = (self.low + mask) & !mask;
            if v >= self.low && v - self.low < self.range {
                chosen = Some(v);
                break;
            }
        }
        self.low = chosen.expect("range is non-empty");
        for _ in 0..8 {
            self.shift_low();
        }
        // flush the cache byte
        if self.started {
            self.out.push(self.cache);
        }
        for _ in 0..self.pending {
            self.out.push(0xff);
        }
        while self.out.last() == Some(&0) {
            self.out.pop();
        }
        self.out
    }
}

#[derive(Debug, Clone)]
pub struct RangeDecoder<'a> {
    input: &'a [u8],
    pos: usize,
    code: u64,
    range: u64,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(input: &'a [u8]) -> Self {
        let mut d = RangeDecoder { input, pos: 0, code: 0, range: WINDOW_MASK };
        for _ in 0..WINDOW_BITS / 8 {
            d.code = (d.code << 8) | d.next_byte() as u64;
        }
        d
    }

    #[inline]
    fn next_byte(&mut self) -> u8 {
        let b = self.input.get(self.pos).copied().unwrap_or(0);
        self.pos += 1;
        b
    }

    /// Bytes consumed beyond the end of the input. The encoder trims trailing zero
    /// bytes, so a large value does not by itself mean the input was truncated.
    pub fn overrun(&self) -> usize {
        self.pos.saturating_sub(self.input.len())
    }

    #[inline]
    fn target(&mut self, bits: u32) -> Result<(u64, u32)> {
        if self.code >= self.range {
            return Err(Error::corrupt("range decoder state out of bounds"));
        }
        let r = self.range >> bits;
        let t = (self.code / r).min((1u64 << bits) - 1);
        Ok((r, t as u32))
    }

    #[inline]
    fn consume(&mut self, r: u64, cum: u32, freq: u32, bits: u32) {
        self.code -= r * cum as u64;
        if cum + freq == 1 << bits {
            self.range -= r * cum as u64;
        } else {
            self.range = r * freq as u64;
        }
        while self.range < BOT {
            self.range <<= 8;
            self.code = ((self.code << 8) | self.next_byte() as u64) & WINDOW_MASK;
        }
    }

    pub fn decode(&mut self, cdf: &Cdf) -> Result<usize> {
        let (r, t) = self.target(PROB_BITS)?;
        let s = cdf.find(t);
        let (c, f) = cdf.interval(s);
        self.consume(r, c, f, PROB_BITS);
        Ok(s)
    }

    pub fn decode_bits(&mut self, nbits: u32) -> Result<u32> {
        if nbits == 0 {
            return Ok(0);
        }
        let (r, t) = self.target(nbits)?;
        self.consume(r, t, 1, nbits);
        Ok(t)
    }
}

/// Encode a symbol sequence with a per-position table provider.
pub fn range_encode<'c, F>(symbols: &[usize], mut cdf_at: F) -> Vec<u8>
where
    F: FnMut(usize) -> &'c Cdf,
{
    let mut enc = RangeEncoder::new();
    for (k, &s) in symbols.iter().enumerate() {
        enc.encode(cdf_at(k), s);
    }
    enc.finish()
}

/// Decode exactly `n` symbols.
pub fn range_decode<'c, F>(bytes: &[u8], mut cdf_at: F, n: usize) -> Result<Vec<usize>>
where
    F: FnMut(usize) -> &'c Cdf,
{
    let mut dec = RangeDecoder::new(bytes);
    let mut out = Vec::with_capacity(n.min(1 << 20));
    for k in 0..n {
        out.push(dec.decode(cdf_at(k))?);
    }
    Ok(out)
}
