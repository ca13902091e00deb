//! Permutation side information: Lehmer digits, cross-layer deltas, and a
//! discrete-Laplace range-coded stream with an escape symbol.
//!
//! Stream layout (one independently terminated range-coder stream):
//! one raw bit (0 = absolute digits, 1 = delta against the previous layer's digits),
//! then one modelled symbol per position, with escape payloads as raw bits inline.
//!
//! Absolute digit `z` at position `k` (bound `n = B − k`) is sent directly when
//! `z ≤ 2T+1`, else as the escape symbol followed by `z − (2T+2)` in
//! `bits_for(n − 2T − 2)` bits. A delta `Δ` is sent as `zigzag(Δ)` when that is
//! `≤ 2T+1`, else as escape + sign bit + `|Δ| − (T+1)` (positive) or `|Δ| − (T+2)`
//! (negative), with widths derived from the feasible range of `Δ`.

use half::f16;

use crate::blocks::Permutation;
use crate::entropy::bits::{bits_for, BitReader, BitWriter};
use crate::entropy::{Cdf, RangeDecoder, RangeEncoder};
use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: u32 = 16;
pub const NUM_BUCKETS: usize = 8;
pub const SCALE_FLOOR: f64 = 1e-3;
pub const DEFAULT_SCALE: f64 = 1.0;

/// Fenwick tree over 0..n counting present elements.
struct Fenwick {
    tree: Vec<u32>,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Fenwick { tree: vec![0; n + 1] }
    }

    fn full(n: usize) -> Self {
        let mut f = Fenwick::new(n);
        for i in 1..=n {
            f.tree[i] += 1;
            let j = i + (i & i.wrapping_neg());
            if j <= n {
                f.tree[j] += f.tree[i];
            }
        }
        f
    }

    fn add(&mut self, i: usize, d: i32) {
        let mut i = i + 1;
        while i < self.tree.len() {
            self.tree[i] = (self.tree[i] as i32 + d) as u32;
            i += i & i.wrapping_neg();
        }
    }

    /// Count of present elements with index < i.
    fn prefix(&self, i: usize) -> u32 {
        let (mut i, mut s) = (i, 0);
        while i > 0 {
            s += self.tree[i];
            i -= i & i.wrapping_neg();
        }
        s
    }

    /// Index of the (k+1)-th present element.
    fn select(&self, mut k: u32) -> usize {
        let n = self.tree.len() - 1;
        let mut pos = 0;
        let mut step = n.next_power_of_two();
        while step > 0 {
            let nxt = pos + step;
            if nxt <= n && self.tree[nxt] <= k {
                pos = nxt;
                k -= self.tree[nxt];
            }
            step >>= 1;
        }
        pos
    }
}

/// `z_k = |{j > k : π(j) < π(k)}|`.
pub fn lehmer_encode(p: &Permutation) -> Vec<u32> {
    let n = p.len();
    let mut seen = Fenwick::new(n);
    let mut z = vec![0u32; n];
    for k in (0..n).rev() {
        let v = p.get(k);
        z[k] = seen.prefix(v);
        seen.add(v, 1);
    }
    z
}

pub fn lehmer_decode(digits: &[u32]) -> Result<Permutation> {
    let n = digits.len();
    let mut avail = Fenwick::full(n);
    let mut map = Vec::with_capacity(n);
    for (k, &d) in digits.iter().enumerate() {
        let bound = (n - k - 1) as u32;
        if d > bound {
            return Err(Error::DigitOutOfRange { pos: k, digit: d, bound });
        }
        let v = avail.select(d);
        avail.add(v, -1);
        map.push(v as u32);
    }
    Permutation::new(map)
}

#[inline]
pub fn zigzag(x: i64) -> u64 {
    if x >= 0 {
        (x as u64) << 1
    } else {
        ((-(x + 1)) as u64) * 2 + 1
    }
}

#[inline]
pub fn unzigzag(u: u64) -> i64 {
    if u & 1 == 0 {
        (u >> 1) as i64
    } else {
        -((u >> 1) as i64) - 1
    }
}

pub fn delta_digits(curr: &[u32], prev: &[u32]) -> Result<Vec<i64>> {
    if curr.len() != prev.len() {
        return Err(Error::LengthMismatch { expected: prev.len(), got: curr.len() });
    }
    Ok(curr.iter().zip(prev).map(|(&c, &p)| c as i64 - p as i64).collect())
}

pub fn reconstruct_digits(prev: &[u32], delta: &[i64]) -> Result<Vec<u32>> {
    if delta.len() != prev.len() {
        return Err(Error::LengthMismatch { expected: prev.len(), got: delta.len() });
    }
    prev.iter()
        .zip(delta)
        .enumerate()
        .map(|(k, (&p, &d))| {
            let v = p as i64 + d;
            let bound = (prev.len() - k - 1) as i64;
            if !(0..=bound).contains(&v) {
                return Err(Error::DigitOutOfRange { pos: k, digit: v.max(0) as u32, bound: bound as u32 });
            }
            Ok(v as u32)
        })
        .collect()
}

/// `log2(B!)`, the cost of a uniformly random permutation.
pub fn log2_factorial(b: usize) -> f64 {
    (2..=b).map(|k| (k as f64).log2()).sum()
}

/// Laplace MLE for a zero-centred sample: mean absolute value, floored; `DEFAULT_SCALE` if empty.
pub fn laplace_scale(samples: &[i64]) -> f64 {
    if samples.is_empty() {
        return DEFAULT_SCALE;
    }
    let m = samples.iter().map(|x| x.unsigned_abs() as f64).sum::<f64>() / samples.len() as f64;
    m.max(SCALE_FLOOR)
}

#[inline]
pub fn bucket(k: usize, b: usize) -> usize {
    (k * NUM_BUCKETS / b.max(1)).min(NUM_BUCKETS - 1)
}

fn to_f16_scale(s: f64) -> f32 {
    let h = f16::from_f64(s.max(SCALE_FLOOR));
    let v = h.to_f32();
    if v > 0.0 && v.is_finite() {
        v
    } else {
        f16::MAX.to_f32()
    }
}

/// Per-type permutation model η: bucketed scales for absolute digits and for deltas.
#[derive(Debug, Clone, PartialEq)]
pub struct PermModelParams {
    pub threshold: u32,
    pub abs_scales: Vec<f32>,
    pub delta_scales: Vec<f32>,
}

impl Default for PermModelParams {
    fn default() -> Self {
        PermModelParams {
            threshold: DEFAULT_THRESHOLD,
            abs_scales: vec![to_f16_scale(DEFAULT_SCALE); NUM_BUCKETS],
            delta_scales: vec![to_f16_scale(DEFAULT_SCALE); NUM_BUCKETS],
        }
    }
}

impl PermModelParams {
    /// 2 bytes threshold, then 2×8 f16 scales.
    pub fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.threshold as u16).to_le_bytes());
        for s in self.abs_scales.iter().chain(&self.delta_scales) {
            out.extend_from_slice(&f16::from_f32(*s).to_bits().to_le_bytes());
        }
    }

    pub const ENCODED_LEN: usize = 2 + 4 * NUM_BUCKETS;

    pub fn read(r: &mut crate::codec::wire::Reader) -> Result<Self> {
        let threshold = r.u16()? as u32;
        if threshold == 0 || threshold > 4096 {
            return Err(Error::corrupt(format!("permutation escape threshold {threshold}")));
        }
        let mut scales = Vec::with_capacity(2 * NUM_BUCKETS);
        for _ in 0..2 * NUM_BUCKETS {
            let v = f16::from_bits(r.u16()?).to_f32();
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::corrupt("permutation scale not positive"));
            }
            scales.push(v);
        }
        let delta_scales = scales.split_off(NUM_BUCKETS);
        Ok(PermModelParams { threshold, abs_scales: scales, delta_scales })
    }
}

/// Fit bucket scales by maximum likelihood from absolute digit streams and delta streams.
pub fn fit_perm_model(abs_streams: &[&[u32]], delta_streams: &[&[i64]], threshold: u32) -> PermModelParams {
    let mut abs: Vec<Vec<i64>> = vec![Vec::new(); NUM_BUCKETS];
    for s in abs_streams {
        for (k, &z) in s.iter().enumerate() {
            abs[bucket(k, s.len())].push(z as i64);
        }
    }
    let mut del: Vec<Vec<i64>> = vec![Vec::new(); NUM_BUCKETS];
    for s in delta_streams {
        for (k, &d) in s.iter().enumerate() {
            del[bucket(k, s.len())].push(d);
        }
    }
    PermModelParams {
        threshold,
        abs_scales: abs.iter().map(|v| to_f16_scale(laplace_scale(v))).collect(),
        delta_scales: del.iter().map(|v| to_f16_scale(laplace_scale(v))).collect(),
    }
}

/// Alphabet: values `0..=2T+1` then the escape symbol `2T+2`.
/// Ratio `r` of the geometric family `P ∝ r^|Δ|` whose mean magnitude is `b`, which is
/// its maximum-likelihood fit given the mean absolute sample. `exp(−1/b)` (the continuous
/// Laplace) badly underweights ±1 when most deltas are zero.
fn geometric_ratio(b: f64, two_sided: bool) -> f64 {
    if two_sided {
        // E|Δ| = 2r/(1−r²)
        ((1.0 + b * b).sqrt() - 1.0) / b
    } else {
        // E z = r/(1−r)
        b / (1.0 + b)
    }
}

fn symbol_cdf(scale: f32, threshold: u32, two_sided: bool) -> Result<Cdf> {
    let t = threshold as i64;
    let r = geometric_ratio(scale as f64, two_sided);
    let direct = 2 * t + 2;
    let mut p = Vec::with_capacity(direct as usize + 1);
    let mut esc;
    if two_sided {
        // symbol u carries Δ = unzigzag(u) ∈ [−(T+1), T]
        for u in 0..direct {
            p.push(r.powi(unzigzag(u as u64).unsigned_abs() as i32));
        }
        // tails: Δ ≥ T+1 and Δ ≤ −(T+2)
        esc = (r.powi((t + 1) as i32) + r.powi((t + 2) as i32)) / (1.0 - r);
    } else {
        for z in 0..direct {
            p.push(r.powi(z as i32));
        }
        esc = r.powi(direct as i32) / (1.0 - r);
    }
    if !esc.is_finite() {
        esc = 1.0;
    }
    p.push(esc);
    Cdf::from_probs(&p)
}

struct Tables {
    abs: Vec<Cdf>,
    delta: Vec<Cdf>,
}

fn tables(m: &PermModelParams) -> Result<Tables> {
    Ok(Tables {
        abs: m.abs_scales.iter().map(|&s| symbol_cdf(s, m.threshold, false)).collect::<Result<_>>()?,
        delta: m.delta_scales.iter().map(|&s| symbol_cdf(s, m.threshold, true)).collect::<Result<_>>()?,
    })
}

fn put_raw(enc: &mut RangeEncoder, value: u64, nbits: u32) {
    let mut left = nbits;
    while left > 0 {
        let take = left.min(16);
        left -= take;
        enc.encode_bits(((value >> left) & ((1 << take) - 1)) as u32, take);
    }
}

fn get_raw(dec: &mut RangeDecoder, nbits: u32) -> Result<u64> {
    let mut left = nbits;
    let mut v = 0u64;
    while left > 0 {
        let take = left.min(16);
        left -= take;
        v = (v << take) | dec.decode_bits(take)? as u64;
    }
    Ok(v)
}

/// Encode digits; `prev` selects delta mode.
pub fn encode_perm_stream(digits: &[u32], prev: Option<&[u32]>, model: &PermModelParams) -> Result<Vec<u8>> {
    let b = digits.len();
    let tab = tables(model)?;
    let t = model.threshold as i64;
    let direct = 2 * t + 2;
    let mut enc = RangeEncoder::new();
    enc.encode_bits(prev.is_some() as u32, 1);
    match prev {
        None => {
            for (k, &z) in digits.iter().enumerate() {
                let cdf = &tab.abs[bucket(k, b)];
                let n = (b - k) as i64;
                let z = z as i64;
                if z >= n {
                    return Err(Error::DigitOutOfRange { pos: k, digit: z as u32, bound: (n - 1) as u32 });
                }
                if z < direct {
                    enc.encode(cdf, z as usize);
                } else {
                    enc.encode(cdf, direct as usize);
                    put_raw(&mut enc, (z - direct) as u64, bits_for((n - direct) as u64));
                }
            }
        }
        Some(prev) => {
            let deltas = delta_digits(digits, prev)?;
            for (k, &d) in deltas.iter().enumerate() {
                let cdf = &tab.delta[bucket(k, b)];
                let u = zigzag(d);
                if u < direct as u64 {
                    enc.encode(cdf, u as usize);
                    continue;
                }
                enc.encode(cdf, direct as usize);
                let n = (b - k) as i64;
                let p = prev[k] as i64;
                if d > 0 {
                    enc.encode_bits(0, 1);
                    put_raw(&mut enc, (d - (t + 1)) as u64, bits_for((n - 1 - p - t) as u64));
                } else {
                    enc.encode_bits(1, 1);
                    put_raw(&mut enc, (-d - (t + 2)) as u64, bits_for((p - t - 1).max(0) as u64));
                }
            }
        }
    }
    Ok(enc.finish())
}

/// Decode `b` digits. Delta streams require `prev`.
pub fn decode_perm_stream(bytes: &[u8], b: usize, prev: Option<&[u32]>, model: &PermModelParams) -> Result<Vec<u32>> {
    let tab = tables(model)?;
    let t = model.threshold as i64;
    let direct = 2 * t + 2;
    let mut dec = RangeDecoder::new(bytes);
    let delta_mode = dec.decode_bits(1)? == 1;
    let mut digits = Vec::with_capacity(b);
    if !delta_mode {
        for k in 0..b {
            let n = (b - k) as i64;
            let s = dec.decode(&tab.abs[bucket(k, b)])? as i64;
            let z = if s < direct {
                s
            } else {
                direct + get_raw(&mut dec, bits_for((n - direct).max(0) as u64))? as i64
            };
            if z >= n {
                return Err(Error::corrupt(format!("lehmer digit {z} at position {k} exceeds bound {}", n - 1)));
            }
            digits.push(z as u32);
        }
    } else {
        let prev = prev.ok_or_else(|| Error::corrupt("delta-coded permutation without a predecessor"))?;
        if prev.len() != b {
            return Err(Error::corrupt("delta-coded permutation length differs from predecessor"));
        }
        for k in 0..b {
            let n = (b - k) as i64;
            let p = prev[k] as i64;
            let s = dec.decode(&tab.delta[bucket(k, b)])? as i64;
            let d = if s < direct {
                unzigzag(s as u64)
            } else if dec.decode_bits(1)? == 0 {
                (t + 1) + get_raw(&mut dec, bits_for((n - 1 - p - t).max(0) as u64))? as i64
            } else {
                -((t + 2) + get_raw(&mut dec, bits_for((p - t - 1).max(0) as u64))? as i64)
            };
            let z = p + d;
            if !(0..n).contains(&z) {
                return Err(Error::corrupt(format!("lehmer digit {z} at position {k} outside 0..{n}")));
            }
            digits.push(z as u32);
        }
    }
    Ok(digits)
}

/// Fixed-length ablation: each entry in `bits_for(B)` bits.
pub fn encode_perm_fixed(p: &Permutation) -> Vec<u8> {
    let w = bits_for(p.len() as u64);
    let mut bw = BitWriter::new();
    for &v in p.as_slice() {
        bw.put(v as u64, w);
    }
    bw.finish()
}

pub fn decode_perm_fixed(bytes: &[u8], b: usize) -> Result<Permutation> {
    let w = bits_for(b as u64);
    let mut br = BitReader::new(bytes);
    let map = (0..b).map(|_| br.get(w).map(|v| v as u32)).collect::<Result<Vec<_>>>()?;
    Permutation::new(map).map_err(|e| Error::corrupt(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::random_permutation;

    fn p1(v: &[u32]) -> Permutation {
        Permutation::from_one_based(v).unwrap()
    }

    #[test]
    fn lehmer_examples() {
        assert_eq!(lehmer_encode(&Permutation::identity(4)), vec![0, 0, 0, 0]);
        assert_eq!(lehmer_encode(&p1(&[3, 1, 2])), vec![2, 0, 0]);
        assert_eq!(lehmer_encode(&p1(&[3, 2, 1])), vec![2, 1, 0]);
        assert_eq!(lehmer_decode(&[2, 1, 0]).unwrap(), p1(&[3, 2, 1]));
        assert!(matches!(lehmer_decode(&[0, 2, 0]), Err(Error::DigitOutOfRange { pos: 1, digit: 2, bound: 1 })));
    }

    #[test]
    fn zigzag_examples() {
        assert_eq!(zigzag(0), 0);
        assert_eq!(zigzag(5), 10);
        assert_eq!(zigzag(-3), 5);
        for x in -100..100 {
            assert_eq!(unzigzag(zigzag(x)), x);
        }
    }

    #[test]
    fn scale_fits() {
        assert_eq!(laplace_scale(&[0, 0, 0]), SCALE_FLOOR);
        assert_eq!(laplace_scale(&[-1, 1]), 1.0);
        assert_eq!(laplace_scale(&[]), DEFAULT_SCALE);
    }

    #[test]
    fn identity_stream_is_cheap() {
        let b = 64;
        let z = vec![0u32; b];
        let m = fit_perm_model(&[&z], &[], DEFAULT_THRESHOLD);
        let bytes = encode_perm_stream(&z, None, &m).unwrap();
        assert!((bytes.len() * 8) < 2 * b);
        assert_eq!(decode_perm_stream(&bytes, b, None, &m).unwrap(), z);
    }

    #[test]
    fn long_identity_streams_decode_past_trimmed_zeros() {
        // the first symbol keeps the encoder's low at zero, so every output byte is trimmed
        for b in [200, 1000, 4096] {
            let z = vec![0u32; b];
            let m = fit_perm_model(&[&vec![1u32; b][..b - 1], &z], &[], DEFAULT_THRESHOLD);
            let bytes = encode_perm_stream(&z, None, &m).unwrap();
            assert_eq!(decode_perm_stream(&bytes, b, None, &m).unwrap(), z);
        }
    }

    #[test]
    fn escapes_round_trip() {
        let b = 100;
        let prev: Vec<u32> = (0..b as u32).map(|k| if k < 50 { 0 } else { 99 - k }).collect();
        let mut curr = prev.clone();
        curr[3] = 40; // delta +40 > threshold
        curr[60] = 0; // delta −39
        let m = PermModelParams::default();
        for p in [None, Some(prev.as_slice())] {
            let bytes = encode_perm_stream(&curr, p, &m).unwrap();
            assert_eq!(decode_perm_stream(&bytes, b, p, &m).unwrap(), curr);
        }
    }

    #[test]
    fn random_round_trips_both_modes() {
        let m = PermModelParams { threshold: 2, ..Default::default() };
        for seed in 0..300 {
            let b = 1 + (seed % 40) as usize;
            let a = lehmer_encode(&random_permutation(b, seed));
            let c = lehmer_encode(&random_permutation(b, seed + 1000));
            for prev in [None, Some(c.as_slice())] {
                let bytes = encode_perm_stream(&a, prev, &m).unwrap();
                assert_eq!(decode_perm_stream(&bytes, b, prev, &m).unwrap(), a, "seed {seed}");
            }
        }
    }

    #[test]
    fn fixed_length_round_trip() {
        let p = random_permutation(37, 9);
        let bytes = encode_perm_fixed(&p);
        assert_eq!(bytes.len(), (37 * 6 + 7) / 8);
        assert_eq!(decode_perm_fixed(&bytes, 37).unwrap(), p);
    }
}
