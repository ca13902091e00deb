//! Symbol payload coding and reconstruction arithmetic shared by encoder and decoder.

use crate::codec::format::{CODES_FIXED, CODES_RANGE};
use crate::entropy::bits::{bits_for, BitReader, BitWriter};
use crate::entropy::model::{EntropyModel, SymbolContext};
use crate::entropy::rangecoder::{RangeDecoder, RangeEncoder};
use crate::error::{Error, Result};

/// Entropy-code (or pack) `codes`; group `g` spans `codes[g·group_len..]` under `ctxs[g]`.
pub(crate) fn encode_codes(
    codes: &[i32],
    ctxs: &[SymbolContext],
    group_len: usize,
    psi: Option<&EntropyModel>,
) -> Result<(u8, Vec<u8>)> {
    let Some(psi) = psi else {
        let q_max = ctxs.first().map_or(1, |c| c.q_max);
        let w = bits_for(2 * q_max as u64 + 1);
        let mut bw = BitWriter::new();
        for &c in codes {
            bw.put((c + q_max as i32) as u64, w);
        }
        return Ok((CODES_FIXED, bw.finish()));
    };
    let mut enc = RangeEncoder::new();
    for (ctx, group) in ctxs.iter().zip(codes.chunks(group_len)) {
        let cdf = psi.cdf_for(ctx)?;
        let q = ctx.q_max as i64;
        for &c in group {
            if (c as i64).abs() > q {
                return Err(Error::OutOfSupport(c as i64));
            }
            enc.encode(&cdf, (c as i64 + q) as usize);
        }
    }
    Ok((CODES_RANGE, enc.finish()))
}

pub(crate) fn decode_codes(
    coding: u8,
    bytes: &[u8],
    ctxs: &[SymbolContext],
    group_len: usize,
    psi: Option<&EntropyModel>,
) -> Result<Vec<i32>> {
    let n = ctxs.len() * group_len;
    let mut out = Vec::with_capacity(n);
    match (coding, psi) {
        (CODES_FIXED, None) => {
            let q_max = ctxs.first().map_or(1, |c| c.q_max);
            let w = bits_for(2 * q_max as u64 + 1);
            if (n as u64).saturating_mul(w as u64) > bytes.len() as u64 * 8 {
                return Err(Error::corrupt("fixed-length payload truncated"));
            }
            let mut br = BitReader::new(bytes);
            for _ in 0..n {
                let v = br.get(w)? as i64 - q_max as i64;
                if v.unsigned_abs() > q_max as u64 {
                    return Err(Error::corrupt(format!("fixed-length code {v} outside ±{q_max}")));
                }
                out.push(v as i32);
            }
        }
        (CODES_RANGE, Some(psi)) => {
            let mut dec = RangeDecoder::new(bytes);
            for ctx in ctxs {
                let cdf = psi.cdf_for(ctx)?;
                let q = ctx.q_max as i64;
                for _ in 0..group_len {
                    out.push((dec.decode(&cdf)? as i64 - q) as i32);
                }
            }
        }
        _ => return Err(Error::corrupt(format!("code coding {coding} disagrees with the header flags"))),
    }
    Ok(out)
}

/// `pred + deq` in f32, the reconstruction rule of predictive records.
pub(crate) fn add_f32(pred: &[f32], deq: &[f32]) -> Vec<f32> {
    pred.iter().zip(deq).map(|(&p, &d)| p + d).collect()
}

pub(crate) fn sub_f32(x: &[f32], pred: &[f32]) -> Vec<f32> {
    x.iter().zip(pred).map(|(&a, &p)| a - p).collect()
}

pub(crate) fn split_blocks(flat: &[f32], block_len: usize) -> Vec<Vec<f32>> {
    flat.chunks(block_len).map(<[f32]>::to_vec).collect()
}

pub(crate) fn flatten(blocks: &[Vec<f32>]) -> Vec<f32> {
    blocks.concat()
}
