//! Decoder: sequential traversal and keyframe-segment parallel decoding.

use std::ops::Range;

use rayon::prelude::*;

use crate::blocks::{apply_permutation, assemble_layer, BlockSet, BlockTypeSpec, Permutation};
use crate::codec::format::{
    parse_header, read_record, read_trailer, segment_layers, BlockRec, Header, HeaderLayout, LayerPlan, Plan,
    QInfoWire, RecordFrame, TensorRec, TrailerEntry, FLAG_FIXED_CODES, FLAG_FIXED_PERMS, FLAG_NO_PREDICTOR,
    PERM_FIXED, PERM_RANGE,
};
use crate::codec::records::{add_f32, decode_codes, flatten, split_blocks};
use crate::codec::wire::Reader;
use crate::container::{Checkpoint, LayerTensors, Tensor};
use crate::entropy::bits::bits_for;
use crate::entropy::model::build_context;
use crate::error::{Error, Result};
use crate::permcode::{decode_perm_fixed, decode_perm_stream, lehmer_decode};
use crate::quant::{dequantize, QuantizerParams};

/// Resource bounds applied before any record is decoded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecodeLimits {
    pub max_params: u64,
}

impl Default for DecodeLimits {
    fn default() -> Self {
        DecodeLimits { max_params: 1 << 36 }
    }
}

/// A bitstream whose header has been parsed and whose record grammar is known.
#[derive(Debug, Clone)]
pub struct Stream<'a> {
    pub bytes: &'a [u8],
    pub header: Header,
    pub layout: HeaderLayout,
    pub plan: Plan,
}

impl<'a> Stream<'a> {
    pub fn open(bytes: &'a [u8]) -> Result<Self> {
        Self::open_with_limits(bytes, DecodeLimits::default())
    }

    pub fn open_with_limits(bytes: &'a [u8], limits: DecodeLimits) -> Result<Self> {
        let (header, layout) = parse_header(bytes)?;
        let plan = Plan::build(&header.shapes, &header.block_types, header.keyframe_interval as usize)
            .map_err(|e| Error::ManifestParse(e.to_string()))?;
        if header.record_count as usize != plan.record_count() {
            return Err(Error::RecordCountMismatch(format!(
                "header announces {} records, shapes imply {}",
                header.record_count,
                plan.record_count()
            )));
        }
        if plan.param_count() > limits.max_params {
            return Err(Error::corrupt(format!("{} parameters exceed the decode limit", plan.param_count())));
        }
        if header.has_flag(FLAG_FIXED_CODES) != header.psi.is_none() {
            return Err(Error::corrupt("entropy model presence contradicts the coding flags"));
        }
        Ok(Stream { bytes, header, layout, plan })
    }

    pub fn block_type(&self, slot: usize) -> &BlockTypeSpec {
        &self.header.block_types[slot]
    }
}

/// Instrumentation counters collected while decoding.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DecodeTrace {
    pub predictor_calls: u64,
    pub keyframe_predictor_calls: u64,
    pub records: usize,
}

impl DecodeTrace {
    fn merge(&mut self, o: &DecodeTrace) {
        self.predictor_calls += o.predictor_calls;
        self.keyframe_predictor_calls += o.keyframe_predictor_calls;
        self.records += o.records;
    }
}

/// Decoded context carried along one block type's chain.
#[derive(Debug, Clone)]
struct Chain {
    layer: usize,
    blocks: Vec<Vec<f32>>,
    digits: Vec<u32>,
}

fn qparams(
    s: &Stream,
    wire: &QInfoWire,
    keyframe: bool,
    type_id: Option<u16>,
    groups: usize,
    group_len: usize,
) -> Result<QuantizerParams> {
    let e = &s.header.entropy;
    let q_max = if keyframe { e.q_max_keyframe } else { e.q_max_residual } as u32;
    let q = match wire {
        QInfoWire::Shared { type_id: t } => {
            if keyframe || type_id != Some(*t) {
                return Err(Error::corrupt("shared quantizer reference on a record that cannot use it"));
            }
            let step = s.header.shared_step(*t).ok_or_else(|| Error::corrupt(format!("no shared quantizer table for type {t}")))?;
            QuantizerParams { step: vec![step; groups], mean: None, group_len, q_max }
        }
        QInfoWire::Inline { q_max: qm, group_len: gl, steps, means } => {
            if *qm as u32 != q_max || *gl as usize != group_len || steps.len() != groups {
                return Err(Error::corrupt(format!(
                    "quantizer geometry {}×{} (q_max {}) where {}×{} (q_max {}) is required",
                    steps.len(),
                    gl,
                    qm,
                    groups,
                    group_len,
                    q_max
                )));
            }
            QuantizerParams { step: steps.clone(), mean: means.clone(), group_len, q_max }
        }
    };
    q.validate()?;
    Ok(q)
}

fn decode_block(
    s: &Stream,
    lp: &LayerPlan,
    rec: &BlockRec,
    frame: &RecordFrame,
    prev: Option<&Chain>,
    trace: &mut DecodeTrace,
) -> Result<(Vec<Vec<f32>>, Permutation, Vec<u32>)> {
    let b = rec.layout.block_count;
    let bl = rec.layout.block_len();
    let prev = if rec.keyframe {
        None
    } else {
        match prev {
            Some(c) if c.layer + 1 == lp.index && c.blocks.len() == b => Some(c),
            _ => return Err(Error::corrupt("predictive record without decoded context")),
        }
    };
    let (perm, digits) = match (frame.perm_coding, s.header.has_flag(FLAG_FIXED_PERMS)) {
        (PERM_FIXED, true) => {
            if frame.perm.len() as u64 != (b as u64 * bits_for(b as u64) as u64).div_ceil(8) {
                return Err(Error::corrupt("fixed-length permutation payload has the wrong size"));
            }
            (decode_perm_fixed(frame.perm, b)?, Vec::new())
        }
        (PERM_RANGE, false) => {
            let digits = decode_perm_stream(frame.perm, b, prev.map(|c| c.digits.as_slice()), &s.header.eta[rec.slot])?;
            (lehmer_decode(&digits)?, digits)
        }
        _ => return Err(Error::corrupt("permutation coding contradicts the header flags")),
    };
    let q = qparams(s, &frame.qinfo, rec.keyframe, Some(rec.type_id), b, bl)?;
    if frame.symbol_count as usize != b * bl {
        return Err(Error::corrupt(format!("{} symbols where {} are required", frame.symbol_count, b * bl)));
    }
    let psi = s.header.psi.as_ref();
    let blocks = match prev {
        None => {
            let ctxs = build_context(lp.index, rec.slot, &q, None, true)?;
            let codes = decode_codes(frame.codes_coding, frame.codes, &ctxs, bl, psi)?;
            split_blocks(&dequantize(&codes, &q)?, bl)
        }
        Some(c) => {
            let preds = match &s.header.theta {
                Some(t) => {
                    trace.predictor_calls += b as u64;
                    if rec.keyframe {
                        trace.keyframe_predictor_calls += b as u64;
                    }
                    t.predict_blocks(&c.blocks, lp.index, rec.slot)?
                }
                None if s.header.has_flag(FLAG_NO_PREDICTOR) => c.blocks.clone(),
                None => return Err(Error::corrupt("predictive record without predictor parameters")),
            };
            let pflat = flatten(&preds);
            let ctxs = build_context(lp.index, rec.slot, &q, Some(&pflat), false)?;
            let codes = decode_codes(frame.codes_coding, frame.codes, &ctxs, bl, psi)?;
            split_blocks(&add_f32(&pflat, &dequantize(&codes, &q)?), bl)
        }
    };
    Ok((blocks, perm, digits))
}

fn decode_tensor(s: &Stream, lp: &LayerPlan, tr: &TensorRec, frame: &RecordFrame) -> Result<Tensor> {
    let n = tr.elements();
    let groups = n / tr.group_len;
    let q = qparams(s, &frame.qinfo, true, None, groups, tr.group_len)?;
    if frame.symbol_count as usize != n {
        return Err(Error::corrupt(format!("{} symbols where {n} are required", frame.symbol_count)));
    }
    let ctxs = build_context(lp.index, s.plan.tensor_slot(), &q, None, true)?;
    let codes = decode_codes(frame.codes_coding, frame.codes, &ctxs, tr.group_len, s.header.psi.as_ref())?;
    Tensor::new(tr.shape.clone(), dequantize(&codes, &q)?)
}

fn decode_layer(
    s: &Stream,
    lp: &LayerPlan,
    frames: &[RecordFrame],
    chains: &mut [Option<Chain>],
    trace: &mut DecodeTrace,
) -> Result<LayerTensors> {
    let mut sets: Vec<BlockSet> = Vec::with_capacity(lp.blocks.len());
    for (rec, frame) in lp.blocks.iter().zip(frames) {
        let (blocks, perm, digits) =
            decode_block(s, lp, rec, frame, chains[rec.slot].as_ref(), trace).map_err(|e| e.at_record(frame.id))?;
        let aligned = BlockSet { layer: lp.index, type_id: rec.type_id, blocks };
        sets.push(apply_permutation(&aligned, &perm.inverse()).map_err(|e| e.at_record(frame.id))?);
        chains[rec.slot] = Some(Chain { layer: lp.index, blocks: aligned.blocks, digits });
        trace.records += 1;
    }
    let mut loose = Vec::with_capacity(lp.tensors.len());
    for (tr, frame) in lp.tensors.iter().zip(&frames[lp.blocks.len()..]) {
        loose.push((tr.name.clone(), decode_tensor(s, lp, tr, frame).map_err(|e| e.at_record(frame.id))?));
        trace.records += 1;
    }
    let pairs: Vec<(&BlockTypeSpec, &BlockSet)> =
        lp.blocks.iter().zip(&sets).map(|(b, bs)| (s.block_type(b.slot), bs)).collect();
    assemble_layer(lp.index, &pairs, &s.header.shapes[lp.index - 1], loose)
}

fn expected_ids(lp: &LayerPlan, plan_ids: &[crate::error::RecordId], first: usize) -> Vec<(crate::error::RecordId, bool)> {
    let modes = lp.blocks.iter().map(|b| b.keyframe).chain(lp.tensors.iter().map(|_| true));
    plan_ids[first..first + lp.record_count()].iter().copied().zip(modes).collect()
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    decode_with_trace(bytes).map(|(c, _)| c)
}

/// Sequential decode in traversal order, validating the record grammar and the trailer.
pub fn decode_with_trace(bytes: &[u8]) -> Result<(Checkpoint, DecodeTrace)> {
    let s = Stream::open(bytes)?;
    let ids = s.plan.record_ids();
    let mut r = Reader::new(bytes);
    r.bytes(s.layout.end())?;
    let mut chains: Vec<Option<Chain>> = vec![None; s.plan.type_dims.len()];
    let mut trace = DecodeTrace::default();
    let mut observed: Vec<(u64, u32)> = Vec::with_capacity(ids.len());
    let mut layers = Vec::with_capacity(s.plan.num_layers());
    let mut next = 0;
    for lp in &s.plan.layers {
        let mut frames = Vec::with_capacity(lp.record_count());
        for (id, keyframe) in expected_ids(lp, &ids, next) {
            let off = r.pos();
            frames.push(read_record(&mut r, id, keyframe).map_err(|e| e.at_record(id))?);
            observed.push((off as u64, (r.pos() - off) as u32));
        }
        next += lp.record_count();
        layers.push(decode_layer(&s, lp, &frames, &mut chains, &mut trace)?);
    }
    let (entries, start) = read_trailer(bytes)?;
    if start != r.pos() {
        return Err(Error::corrupt(format!("records end at byte {}, trailer starts at {start}", r.pos())));
    }
    if entries.len() != observed.len() || entries.iter().zip(&observed).any(|(e, o)| (e.offset, e.length) != *o) {
        return Err(Error::corrupt("trailer record table disagrees with the record stream"));
    }
    Ok((Checkpoint { arch_id: s.header.arch_id, layers }, trace))
}

/// Record table from the trailer, checked to tile the region between header and trailer.
pub fn record_table(s: &Stream) -> Result<Vec<TrailerEntry>> {
    let (entries, start) = read_trailer(s.bytes)?;
    if entries.len() != s.plan.record_count() {
        return Err(Error::RecordCountMismatch(format!(
            "trailer lists {} records, header implies {}",
            entries.len(),
            s.plan.record_count()
        )));
    }
    let mut pos = s.layout.end() as u64;
    for e in &entries {
        if e.offset != pos {
            return Err(Error::corrupt("trailer offsets do not tile the record region"));
        }
        pos += e.length as u64;
    }
    if pos != start as u64 {
        return Err(Error::corrupt("trailer offsets do not reach the trailer"));
    }
    Ok(entries)
}

fn decode_segment(
    s: &Stream,
    layers: Range<usize>,
    entries: &[TrailerEntry],
    first_record: &[usize],
    ids: &[crate::error::RecordId],
) -> Result<(Vec<LayerTensors>, DecodeTrace)> {
    let mut chains: Vec<Option<Chain>> = vec![None; s.plan.type_dims.len()];
    let mut trace = DecodeTrace::default();
    let mut out = Vec::with_capacity(layers.len());
    for l in layers {
        let lp = &s.plan.layers[l - 1];
        let first = first_record[l - 1];
        let mut frames = Vec::with_capacity(lp.record_count());
        for (k, (id, keyframe)) in expected_ids(lp, ids, first).into_iter().enumerate() {
            let e = entries[first + k];
            let span = &s.bytes[e.offset as usize..e.offset as usize + e.length as usize];
            let mut r = Reader::new(span);
            let frame = read_record(&mut r, id, keyframe).map_err(|err| err.at_record(id))?;
            if r.remaining() != 0 {
                return Err(Error::corrupt("record shorter than its trailer length").at_record(id));
            }
            frames.push(frame);
        }
        out.push(decode_layer(s, lp, &frames, &mut chains, &mut trace)?);
    }
    Ok((out, trace))
}

/// Decode keyframe segments concurrently on `workers` threads; output equals
/// [`decode_checkpoint`].
pub fn decode_segments_parallel(bytes: &[u8], workers: usize) -> Result<Checkpoint> {
    decode_segments_parallel_with_trace(bytes, workers).map(|(c, _)| c)
}

pub fn decode_segments_parallel_with_trace(bytes: &[u8], workers: usize) -> Result<(Checkpoint, DecodeTrace)> {
    let s = Stream::open(bytes)?;
    let entries = record_table(&s)?;
    let ids = s.plan.record_ids();
    let mut first_record = Vec::with_capacity(s.plan.num_layers());
    let mut acc = 0;
    for lp in &s.plan.layers {
        first_record.push(acc);
        acc += lp.record_count();
    }
    let segments = segment_layers(s.plan.num_layers(), s.plan.k);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
    let parts: Vec<Result<(Vec<LayerTensors>, DecodeTrace)>> = pool.install(|| {
        segments.par_iter().map(|seg| decode_segment(&s, seg.clone(), &entries, &first_record, &ids)).collect()
    });
    let mut layers = Vec::with_capacity(s.plan.num_layers());
    let mut trace = DecodeTrace::default();
    for p in parts {
        let (ls, t) = p?;
        layers.extend(ls);
        trace.merge(&t);
    }
    Ok((Checkpoint { arch_id: s.header.arch_id, layers }, trace))
}
