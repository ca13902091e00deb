//! Bitstream grammar: header, traversal plan, record framing, and trailer.
//!
//! Layout: `header ‖ records (traversal order) ‖ trailer`. All integers little-endian.
//! See `docs/format.md` for the byte-level description.

use std::ops::Range;

use crate::blocks::{layout_for_shapes, BlockLayout, BlockMember, BlockTypeSpec};
use crate::codec::wire::{put_u16, put_u32, put_u64, put_u8, Reader};
use crate::entropy::model::EntropyModel;
use crate::error::{Error, RecordId, RecordUnit, Result};
use crate::permcode::PermModelParams;
use crate::predictor::{Predictor, PredictorConfig};

pub const MAGIC: [u8; 4] = *b"MCWC";
pub const VERSION: u16 = 1;
pub const TRAILER_MAGIC: [u8; 4] = *b"MCWT";
/// Model id of the discretized-logistic entropy model.
pub const ENTROPY_MODEL_LOGISTIC: u16 = 1;

pub const FLAG_FIXED_CODES: u32 = 1;
pub const FLAG_FIXED_PERMS: u32 = 1 << 1;
pub const FLAG_NO_PREDICTOR: u32 = 1 << 2;
const KNOWN_FLAGS: u32 = FLAG_FIXED_CODES | FLAG_FIXED_PERMS | FLAG_NO_PREDICTOR;

pub const KIND_BLOCK: u8 = 0;
pub const KIND_TENSOR: u8 = 1;
pub const MODE_PREDICTIVE: u8 = 0;
pub const MODE_KEYFRAME: u8 = 1;

pub const PERM_NONE: u8 = 0;
pub const PERM_RANGE: u8 = 1;
pub const PERM_FIXED: u8 = 2;
pub const CODES_RANGE: u8 = 1;
pub const CODES_FIXED: u8 = 2;

pub const QINFO_SHARED: u8 = 1;
pub const QINFO_MEANS: u8 = 1 << 1;

const MAX_LAYERS: usize = 1 << 20;
const MAX_NDIM: usize = 8;
const MAX_NAME: usize = 4096;

/// 1 iff layer `layer` (1-based) starts a keyframe segment.
pub fn keyframe_indicator(layer: usize, k: usize) -> bool {
    assert!(layer >= 1 && k >= 1, "keyframe_indicator needs layer ≥ 1 and K ≥ 1");
    (layer - 1).is_multiple_of(k)
}

/// Number of independently decodable segments, `ceil(L/K)`.
pub fn segment_count(num_layers: usize, k: usize) -> usize {
    assert!(k >= 1, "K must be at least 1");
    num_layers.div_ceil(k)
}

/// 1-based layer ranges (inclusive start, exclusive end) of each segment.
pub fn segment_layers(num_layers: usize, k: usize) -> Vec<Range<usize>> {
    (0..segment_count(num_layers, k)).map(|s| s * k + 1..((s + 1) * k).min(num_layers) + 1).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EntropySpec {
    pub model_id: u16,
    pub embed_dim: u32,
    pub hidden: u32,
    pub q_max_residual: u16,
    pub q_max_keyframe: u16,
    pub prob_bits: u8,
}

/// A quantizer step shared by every residual record of one block type.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SharedQuant {
    pub type_id: u16,
    pub step: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Header {
    pub version: u16,
    pub num_layers: u32,
    pub keyframe_interval: u32,
    pub arch_id: u32,
    pub flags: u32,
    /// Per layer, tensor names and shapes in container order.
    pub shapes: Vec<Vec<(String, Vec<usize>)>>,
    /// Ascending by type id.
    pub block_types: Vec<BlockTypeSpec>,
    pub predictor_cfg: PredictorConfig,
    pub entropy: EntropySpec,
    pub theta: Option<Predictor>,
    pub psi: Option<EntropyModel>,
    /// One permutation model per block type, in block-type order.
    pub eta: Vec<PermModelParams>,
    pub shared_q: Vec<SharedQuant>,
    pub record_count: u32,
}

/// Byte spans of the header sections.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct HeaderLayout {
    pub fixed: Range<usize>,
    pub theta: Range<usize>,
    pub psi: Range<usize>,
    pub eta: Range<usize>,
    pub shared_q: Range<usize>,
    pub tail: Range<usize>,
}

impl HeaderLayout {
    pub fn end(&self) -> usize {
        self.tail.end
    }
}

impl Header {
    pub fn has_flag(&self, f: u32) -> bool {
        self.flags & f != 0
    }

    pub fn shared_step(&self, type_id: u16) -> Option<f32> {
        self.shared_q.iter().find(|s| s.type_id == type_id).map(|s| s.step)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u16(out, s.len() as u16);
    out.extend_from_slice(s.as_bytes());
}

fn read_str(r: &mut Reader) -> Result<String> {
    let n = r.u16()? as usize;
    if n > MAX_NAME {
        return Err(Error::ManifestParse(format!("name of {n} bytes")));
    }
    let raw = r.bytes(n)?;
    String::from_utf8(raw.to_vec()).map_err(|_| Error::ManifestParse("name is not valid UTF-8".into()))
}

pub fn write_header(h: &Header) -> Vec<u8> {
    write_header_with_layout(h).0
}

pub fn write_header_with_layout(h: &Header) -> (Vec<u8>, HeaderLayout) {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    put_u16(&mut out, h.version);
    put_u32(&mut out, h.num_layers);
    put_u32(&mut out, h.keyframe_interval);
    put_u32(&mut out, h.arch_id);
    put_u32(&mut out, h.flags);
    for layer in &h.shapes {
        put_u32(&mut out, layer.len() as u32);
        for (name, shape) in layer {
            put_str(&mut out, name);
            put_u8(&mut out, shape.len() as u8);
            for &d in shape {
                put_u32(&mut out, d as u32);
            }
        }
    }
    put_u32(&mut out, h.block_types.len() as u32);
    for t in &h.block_types {
        put_u16(&mut out, t.type_id);
        put_str(&mut out, &t.name);
        put_u16(&mut out, t.members.len() as u16);
        for m in &t.members {
            put_str(&mut out, &m.tensor);
            put_u8(&mut out, m.axis as u8);
        }
    }
    put_u32(&mut out, h.predictor_cfg.d_lat as u32);
    put_u32(&mut out, h.predictor_cfg.d_emb as u32);
    put_u32(&mut out, h.predictor_cfg.hidden_mult as u32);
    let e = &h.entropy;
    put_u16(&mut out, e.model_id);
    put_u32(&mut out, e.embed_dim);
    put_u32(&mut out, e.hidden);
    put_u16(&mut out, e.q_max_residual);
    put_u16(&mut out, e.q_max_keyframe);
    put_u8(&mut out, e.prob_bits);
    let fixed = 0..out.len();

    let section = |out: &mut Vec<u8>, body: Option<Vec<u8>>| {
        let start = out.len();
        let body = body.unwrap_or_default();
        put_u64(out, body.len() as u64);
        out.extend_from_slice(&body);
        start..out.len()
    };
    let theta = section(
        &mut out,
        h.theta.as_ref().map(|p| {
            let mut b = Vec::new();
            p.write(&mut b);
            b
        }),
    );
    let psi = section(
        &mut out,
        h.psi.as_ref().map(|m| {
            let mut b = Vec::new();
            m.write(&mut b);
            b
        }),
    );
    let start = out.len();
    put_u32(&mut out, h.eta.len() as u32);
    for m in &h.eta {
        m.write(&mut out);
    }
    let eta = start..out.len();
    let start = out.len();
    put_u32(&mut out, h.shared_q.len() as u32);
    for s in &h.shared_q {
        put_u16(&mut out, s.type_id);
        out.extend_from_slice(&s.step.to_le_bytes());
    }
    let shared_q = start..out.len();
    let start = out.len();
    put_u32(&mut out, h.record_count);
    let tail = start..out.len();
    (out, HeaderLayout { fixed, theta, psi, eta, shared_q, tail })
}

pub fn parse_header(bytes: &[u8]) -> Result<(Header, HeaderLayout)> {
    let mut r = Reader::new(bytes);
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    r.bytes(4)?;
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let num_layers = r.u32()?;
    let keyframe_interval = r.u32()?;
    let arch_id = r.u32()?;
    let flags = r.u32()?;
    if num_layers == 0 || num_layers as usize > MAX_LAYERS {
        return Err(Error::ManifestParse(format!("layer count {num_layers}")));
    }
    if keyframe_interval == 0 {
        return Err(Error::ManifestParse("keyframe interval 0".into()));
    }
    if flags & !KNOWN_FLAGS != 0 {
        return Err(Error::ManifestParse(format!("unknown flags {flags:#x}")));
    }
    let mut shapes = Vec::with_capacity((num_layers as usize).min(r.remaining() / 4));
    for l in 0..num_layers {
        let n = r.count(3)?;
        let mut layer: Vec<(String, Vec<usize>)> = Vec::with_capacity(n);
        for _ in 0..n {
            let name = read_str(&mut r)?;
            let nd = r.u8()? as usize;
            if nd == 0 || nd > MAX_NDIM {
                return Err(Error::ManifestParse(format!("tensor `{name}` has {nd} dims")));
            }
            let shape = (0..nd).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            if shape.contains(&0) || shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).is_none() {
                return Err(Error::ManifestParse(format!("tensor `{name}` has invalid shape {shape:?}")));
            }
            if layer.iter().any(|(n, _)| *n == name) {
                return Err(Error::ManifestParse(format!("duplicate tensor `{name}` in layer {}", l + 1)));
            }
            layer.push((name, shape));
        }
        if layer.is_empty() {
            return Err(Error::ManifestParse(format!("layer {} has no tensors", l + 1)));
        }
        shapes.push(layer);
    }
    let nt = r.count(4)?;
    let mut block_types = Vec::with_capacity(nt);
    for _ in 0..nt {
        let type_id = r.u16()?;
        let name = read_str(&mut r)?;
        let nm = r.u16()? as usize;
        let mut members = Vec::with_capacity(nm.min(r.remaining()));
        for _ in 0..nm {
            let tensor = read_str(&mut r)?;
            let axis = r.u8()? as usize;
            members.push(BlockMember { tensor, axis });
        }
        block_types.push(BlockTypeSpec { type_id, name, members });
    }
    validate_block_types(&block_types).map_err(|e| Error::ManifestParse(e.to_string()))?;
    let predictor_cfg =
        PredictorConfig { d_lat: r.u32()? as usize, d_emb: r.u32()? as usize, hidden_mult: r.u32()? as usize };
    let entropy = EntropySpec {
        model_id: r.u16()?,
        embed_dim: r.u32()?,
        hidden: r.u32()?,
        q_max_residual: r.u16()?,
        q_max_keyframe: r.u16()?,
        prob_bits: r.u8()?,
    };
    if entropy.model_id != ENTROPY_MODEL_LOGISTIC {
        return Err(Error::ManifestParse(format!("unknown entropy model id {}", entropy.model_id)));
    }
    if entropy.prob_bits as u32 != crate::entropy::PROB_BITS {
        return Err(Error::ManifestParse(format!("coder precision {} bits", entropy.prob_bits)));
    }
    if entropy.q_max_residual == 0 || entropy.q_max_keyframe == 0 || entropy.q_max_residual > 32767 || entropy.q_max_keyframe > 32767 {
        return Err(Error::ManifestParse("q_max out of range".into()));
    }
    let fixed = 0..r.pos();

    let plan_dims = Plan::build(&shapes, &block_types, keyframe_interval as usize)
        .map_err(|e| Error::ManifestParse(e.to_string()))?;

    let start = r.pos();
    let len = r.u64()?;
    let body = r.bytes(usize::try_from(len).map_err(|_| Error::corrupt("θ section too long"))?)?;
    let theta = if len == 0 {
        None
    } else {
        if flags & FLAG_NO_PREDICTOR != 0 {
            return Err(Error::corrupt("predictor parameters present with identity prediction"));
        }
        predictor_cfg.validate().map_err(|e| Error::ManifestParse(e.to_string()))?;
        check_model_size(predictor_param_count(&predictor_cfg, num_layers as usize, &plan_dims.type_dims), body.len())?;
        let mut p = Predictor::new(predictor_cfg, num_layers as usize, plan_dims.type_dims.clone());
        if p.read(body)? != body.len() {
            return Err(Error::corrupt("trailing bytes in θ section"));
        }
        Some(p)
    };
    let theta_r = start..r.pos();
    let start = r.pos();
    let len = r.u64()?;
    let body = r.bytes(usize::try_from(len).map_err(|_| Error::corrupt("ψ section too long"))?)?;
    let psi = if len == 0 {
        None
    } else {
        if entropy.embed_dim == 0 || entropy.hidden == 0 {
            return Err(Error::ManifestParse("entropy model dimensions are zero".into()));
        }
        let slots = plan_dims.num_slots();
        let (e, hd) = (entropy.embed_dim as usize, entropy.hidden as usize);
        let count = (num_layers as usize + slots)
            .saturating_mul(e)
            .saturating_add(hd.saturating_mul(2 * e + 4 + 1))
            .saturating_add(2 * hd + 2);
        check_model_size(count, body.len())?;
        let mut m = EntropyModel::new(num_layers as usize, slots, e, hd);
        if m.read(body)? != body.len() {
            return Err(Error::corrupt("trailing bytes in ψ section"));
        }
        Some(m)
    };
    let psi_r = start..r.pos();
    let start = r.pos();
    let ne = r.count(PermModelParams::ENCODED_LEN)?;
    if ne != block_types.len() {
        return Err(Error::corrupt(format!("{ne} permutation models for {} block types", block_types.len())));
    }
    let eta = (0..ne).map(|_| PermModelParams::read(&mut r)).collect::<Result<Vec<_>>>()?;
    let eta_r = start..r.pos();
    let start = r.pos();
    let ns = r.count(6)?;
    let mut shared_q = Vec::with_capacity(ns);
    for _ in 0..ns {
        let type_id = r.u16()?;
        let step = r.f32()?;
        if !(step.is_finite() && step > 0.0) {
            return Err(Error::corrupt("shared quantizer step not positive"));
        }
        if !block_types.iter().any(|t| t.type_id == type_id) || shared_q.iter().any(|s: &SharedQuant| s.type_id == type_id) {
            return Err(Error::corrupt(format!("shared quantizer table for unknown or repeated type {type_id}")));
        }
        shared_q.push(SharedQuant { type_id, step });
    }
    let shared_r = start..r.pos();
    let start = r.pos();
    let record_count = r.u32()?;
    let tail = start..r.pos();
    let header = Header {
        version,
        num_layers,
        keyframe_interval,
        arch_id,
        flags,
        shapes,
        block_types,
        predictor_cfg,
        entropy,
        theta,
        psi,
        eta,
        shared_q,
        record_count,
    };
    Ok((header, HeaderLayout { fixed, theta: theta_r, psi: psi_r, eta: eta_r, shared_q: shared_r, tail }))
}

/// Shape tables hold at least 4 bytes per parameter; reject geometry that cannot fit
/// before allocating it.
fn check_model_size(params: usize, body: usize) -> Result<()> {
    if params.saturating_mul(4) > body {
        return Err(Error::corrupt(format!("model section of {body} bytes cannot hold {params} parameters")));
    }
    Ok(())
}

fn predictor_param_count(cfg: &PredictorConfig, layers: usize, type_dims: &[usize]) -> usize {
    let (dl, de, h) = (cfg.d_lat, cfg.d_emb, cfg.hidden_mult.saturating_mul(cfg.d_lat));
    let core = (layers + type_dims.len())
        .saturating_mul(de)
        .saturating_add(2usize.saturating_mul(dl).saturating_mul(de))
        .saturating_add(2usize.saturating_mul(h).saturating_mul(dl))
        .saturating_add(h)
        .saturating_add(dl);
    type_dims
        .iter()
        .fold(core, |acc, &d| acc.saturating_add(2usize.saturating_mul(d).saturating_mul(dl)).saturating_add(d + dl))
}

/// Type ids strictly ascending, member tensors unique across types, at least one member each.
pub fn validate_block_types(types: &[BlockTypeSpec]) -> Result<()> {
    for w in types.windows(2) {
        if w[0].type_id >= w[1].type_id {
            return Err(Error::InvalidConfig(format!(
                "block types must be ascending by type id ({} before {})",
                w[0].type_id, w[1].type_id
            )));
        }
    }
    let mut seen: Vec<&str> = Vec::new();
    for t in types {
        if t.members.is_empty() {
            return Err(Error::InvalidConfig(format!("block type {} has no members", t.type_id)));
        }
        for m in &t.members {
            if seen.contains(&m.tensor.as_str()) {
                return Err(Error::InvalidConfig(format!("tensor `{}` belongs to two block members", m.tensor)));
            }
            seen.push(&m.tensor);
        }
    }
    Ok(())
}

/// One block-type record of the traversal.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockRec {
    pub slot: usize,
    pub type_id: u16,
    pub layout: BlockLayout,
    /// Keyframe mode: absolute coding, identity-reset permutation chain.
    pub keyframe: bool,
}

impl BlockRec {
    pub fn elements(&self) -> usize {
        self.layout.block_count * self.layout.block_len()
    }
}

/// A tensor outside every block type, coded as a standalone keyframe-mode record.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorRec {
    pub ordinal: u16,
    pub name: String,
    pub shape: Vec<usize>,
    pub group_len: usize,
}

impl TensorRec {
    pub fn elements(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerPlan {
    /// 1-based.
    pub index: usize,
    pub keyframe: bool,
    pub blocks: Vec<BlockRec>,
    pub tensors: Vec<TensorRec>,
}

impl LayerPlan {
    pub fn block_by_slot(&self, slot: usize) -> Option<(usize, &BlockRec)> {
        self.blocks.iter().enumerate().find(|(_, b)| b.slot == slot)
    }

    pub fn record_count(&self) -> usize {
        self.blocks.len() + self.tensors.len()
    }
}

/// Record geometry and modes for every layer, derived from shapes and block types alone.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub layers: Vec<LayerPlan>,
    /// Block length per type slot (0 for types that never appear).
    pub type_dims: Vec<usize>,
    pub k: usize,
}

impl Plan {
    pub fn build(shapes: &[Vec<(String, Vec<usize>)>], types: &[BlockTypeSpec], k: usize) -> Result<Plan> {
        if k == 0 {
            return Err(Error::InvalidConfig("keyframe interval must be at least 1".into()));
        }
        validate_block_types(types)?;
        let mut type_dims = vec![0usize; types.len()];
        let mut layers: Vec<LayerPlan> = Vec::with_capacity(shapes.len());
        for (li, layer) in shapes.iter().enumerate() {
            let index = li + 1;
            let keyframe = keyframe_indicator(index, k);
            let mut blocks = Vec::new();
            let mut covered: Vec<&str> = Vec::new();
            for (slot, spec) in types.iter().enumerate() {
                let shape_of = |n: &str| layer.iter().find(|(m, _)| m == n).map(|(_, s)| s.as_slice());
                let Some(layout) = layout_for_shapes(spec, shape_of)? else { continue };
                covered.extend(spec.members.iter().map(|m| m.tensor.as_str()));
                if layout.block_len() == 0 {
                    return Err(Error::ShapeMismatch(format!("block type {} has empty blocks", spec.type_id)));
                }
                if type_dims[slot] == 0 {
                    type_dims[slot] = layout.block_len();
                }
                let chained = li > 0
                    && layers[li - 1].block_by_slot(slot).is_some_and(|(_, p)| p.layout == layout)
                    && layout.block_len() == type_dims[slot];
                blocks.push(BlockRec { slot, type_id: spec.type_id, layout, keyframe: keyframe || !chained });
            }
            let mut tensors = Vec::new();
            for (name, shape) in layer {
                if covered.contains(&name.as_str()) {
                    continue;
                }
                let numel: usize = shape.iter().product();
                let group_len = if shape.len() >= 2 { numel / shape[0] } else { numel };
                if tensors.len() >= u16::MAX as usize {
                    return Err(Error::InvalidCheckpoint(format!("layer {index} has too many uncovered tensors")));
                }
                tensors.push(TensorRec { ordinal: tensors.len() as u16, name: name.clone(), shape: shape.clone(), group_len });
            }
            layers.push(LayerPlan { index, keyframe, blocks, tensors });
        }
        Ok(Plan { layers, type_dims, k })
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Block types plus one slot for uncovered tensors.
    pub fn num_slots(&self) -> usize {
        self.type_dims.len() + 1
    }

    pub fn tensor_slot(&self) -> usize {
        self.type_dims.len()
    }

    pub fn record_count(&self) -> usize {
        self.layers.iter().map(LayerPlan::record_count).sum()
    }

    pub fn param_count(&self) -> u64 {
        self.layers
            .iter()
            .map(|l| {
                l.blocks.iter().map(|b| b.elements() as u64).sum::<u64>()
                    + l.tensors.iter().map(|t| t.elements() as u64).sum::<u64>()
            })
            .sum()
    }

    /// Record ids in traversal order.
    pub fn record_ids(&self) -> Vec<RecordId> {
        let mut ids = Vec::with_capacity(self.record_count());
        for l in &self.layers {
            for b in &l.blocks {
                ids.push(RecordId { layer: l.index as u32, unit: RecordUnit::Block(b.type_id) });
            }
            for t in &l.tensors {
                ids.push(RecordId { layer: l.index as u32, unit: RecordUnit::Tensor(t.ordinal) });
            }
        }
        ids
    }
}

/// Inline or shared quantizer parameters of one record.
#[derive(Debug, Clone, PartialEq)]
pub enum QInfoWire {
    Shared { type_id: u16 },
    Inline { q_max: u16, group_len: u32, steps: Vec<f32>, means: Option<Vec<f32>> },
}

/// Parsed (not yet decoded) record with the byte spans used for rate attribution.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordFrame<'a> {
    pub id: RecordId,
    pub keyframe: bool,
    pub perm_coding: u8,
    pub perm: &'a [u8],
    pub qinfo: QInfoWire,
    pub codes_coding: u8,
    pub symbol_count: u32,
    pub codes: &'a [u8],
    pub perm_bytes: usize,
    pub qinfo_bytes: usize,
    pub codes_bytes: usize,
    pub total_bytes: usize,
}

impl RecordFrame<'_> {
    pub fn framing_bytes(&self) -> usize {
        self.total_bytes - self.perm_bytes - self.qinfo_bytes - self.codes_bytes
    }
}

pub fn write_qinfo(out: &mut Vec<u8>, q: &QInfoWire) {
    match q {
        QInfoWire::Shared { type_id } => {
            put_u8(out, QINFO_SHARED);
            put_u16(out, *type_id);
        }
        QInfoWire::Inline { q_max, group_len, steps, means } => {
            put_u8(out, if means.is_some() { QINFO_MEANS } else { 0 });
            put_u32(out, steps.len() as u32);
            put_u32(out, *group_len);
            put_u16(out, *q_max);
            crate::codec::wire::put_f32s(out, steps);
            if let Some(m) = means {
                crate::codec::wire::put_f32s(out, m);
            }
        }
    }
}

fn read_qinfo(r: &mut Reader) -> Result<QInfoWire> {
    let flags = r.u8()?;
    if flags & !(QINFO_SHARED | QINFO_MEANS) != 0 || flags == QINFO_SHARED | QINFO_MEANS {
        return Err(Error::corrupt(format!("quantizer info flags {flags:#x}")));
    }
    if flags & QINFO_SHARED != 0 {
        return Ok(QInfoWire::Shared { type_id: r.u16()? });
    }
    let groups = r.count(4)?;
    let group_len = r.u32()?;
    let q_max = r.u16()?;
    let steps = r.f32_vec(groups)?;
    let means = if flags & QINFO_MEANS != 0 { Some(r.f32_vec(groups)?) } else { None };
    Ok(QInfoWire::Inline { q_max, group_len, steps, means })
}

/// Parse one record at the reader position; `expect` is the record the grammar requires here.
pub fn read_record<'a>(r: &mut Reader<'a>, expect: RecordId, expect_keyframe: bool) -> Result<RecordFrame<'a>> {
    let start = r.pos();
    let kind = r.u8()?;
    let layer = r.u32()?;
    let id = r.u16()?;
    let mode = r.u8()?;
    let unit = match kind {
        KIND_BLOCK => RecordUnit::Block(id),
        KIND_TENSOR => RecordUnit::Tensor(id),
        _ => return Err(Error::corrupt(format!("record kind {kind}"))),
    };
    let got = RecordId { layer, unit };
    if got != expect {
        return Err(Error::RecordCountMismatch(format!("expected record {expect}, found {got}")));
    }
    let keyframe = match mode {
        MODE_KEYFRAME => true,
        MODE_PREDICTIVE => false,
        _ => return Err(Error::corrupt(format!("record mode {mode}"))),
    };
    if keyframe != expect_keyframe {
        return Err(Error::corrupt(format!("record mode {mode} contradicts the keyframe schedule")));
    }
    let p0 = r.pos();
    let perm_coding = r.u8()?;
    let perm = match (kind, perm_coding) {
        (KIND_TENSOR, PERM_NONE) => &[][..],
        (KIND_BLOCK, PERM_RANGE | PERM_FIXED) => {
            let n = r.u32()? as usize;
            r.bytes(n)?
        }
        _ => return Err(Error::corrupt(format!("permutation coding {perm_coding} for record kind {kind}"))),
    };
    let perm_bytes = r.pos() - p0;
    let q0 = r.pos();
    let qinfo = read_qinfo(r)?;
    let qinfo_bytes = r.pos() - q0;
    let c0 = r.pos();
    let codes_coding = r.u8()?;
    if codes_coding != CODES_RANGE && codes_coding != CODES_FIXED {
        return Err(Error::corrupt(format!("code coding {codes_coding}")));
    }
    let symbol_count = r.u32()?;
    let n = r.u32()? as usize;
    let codes = r.bytes(n)?;
    let codes_bytes = r.pos() - c0;
    Ok(RecordFrame {
        id: got,
        keyframe,
        perm_coding,
        perm,
        qinfo,
        codes_coding,
        symbol_count,
        codes,
        perm_bytes,
        qinfo_bytes,
        codes_bytes,
        total_bytes: r.pos() - start,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrailerEntry {
    pub offset: u64,
    pub length: u32,
    pub clips: u32,
}

pub const TRAILER_ENTRY_LEN: usize = 16;
pub const TRAILER_FOOTER_LEN: usize = 16;

pub fn write_trailer(out: &mut Vec<u8>, entries: &[TrailerEntry]) {
    let start = out.len() as u64;
    for e in entries {
        put_u64(out, e.offset);
        put_u32(out, e.length);
        put_u32(out, e.clips);
    }
    put_u32(out, entries.len() as u32);
    put_u64(out, start);
    out.extend_from_slice(&TRAILER_MAGIC);
}

/// Parse the trailer from the end of the file. Returns the entries and the trailer start offset.
pub fn read_trailer(bytes: &[u8]) -> Result<(Vec<TrailerEntry>, usize)> {
    if bytes.len() < TRAILER_FOOTER_LEN {
        return Err(Error::corrupt("stream too short for trailer"));
    }
    let mut r = Reader::new(&bytes[bytes.len() - TRAILER_FOOTER_LEN..]);
    let n = r.u32()? as usize;
    let start = r.u64()?;
    if r.array::<4>()? != TRAILER_MAGIC {
        return Err(Error::corrupt("trailer signature missing"));
    }
    let body_end = bytes.len() - TRAILER_FOOTER_LEN;
    let start = usize::try_from(start).map_err(|_| Error::corrupt("trailer offset"))?;
    if start > body_end || n.checked_mul(TRAILER_ENTRY_LEN) != Some(body_end - start) {
        return Err(Error::corrupt("trailer length inconsistent"));
    }
    let mut r = Reader::new(&bytes[start..body_end]);
    let entries = (0..n)
        .map(|_| Ok(TrailerEntry { offset: r.u64()?, length: r.u32()?, clips: r.u32()? }))
        .collect::<Result<Vec<_>>>()?;
    Ok((entries, start))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> Vec<BlockTypeSpec> {
        vec![BlockTypeSpec {
            type_id: 3,
            name: "ffn".into(),
            members: vec![
                BlockMember { tensor: "w_in".into(), axis: 0 },
                BlockMember { tensor: "w_out".into(), axis: 1 },
            ],
        }]
    }

    fn shapes(l: usize, b: usize) -> Vec<Vec<(String, Vec<usize>)>> {
        (0..l)
            .map(|_| {
                vec![
                    ("w_in".to_string(), vec![b, 4]),
                    ("w_out".to_string(), vec![4, b]),
                    ("norm".to_string(), vec![4]),
                ]
            })
            .collect()
    }

    fn header() -> Header {
        Header {
            version: VERSION,
            num_layers: 3,
            keyframe_interval: 2,
            arch_id: 77,
            flags: FLAG_NO_PREDICTOR,
            shapes: shapes(3, 5),
            block_types: spec(),
            predictor_cfg: PredictorConfig { d_lat: 8, d_emb: 4, hidden_mult: 2 },
            entropy: EntropySpec {
                model_id: ENTROPY_MODEL_LOGISTIC,
                embed_dim: 2,
                hidden: 4,
                q_max_residual: 127,
                q_max_keyframe: 255,
                prob_bits: 16,
            },
            theta: None,
            psi: Some(EntropyModel::new(3, 2, 2, 4)),
            eta: vec![PermModelParams::default()],
            shared_q: vec![SharedQuant { type_id: 3, step: 0.25 }],
            record_count: 6,
        }
    }

    #[test]
    fn keyframe_schedule() {
        assert!(keyframe_indicator(1, 4));
        assert!(keyframe_indicator(5, 4));
        assert!(!keyframe_indicator(3, 4));
        assert!((1..10).all(|l| keyframe_indicator(l, 1)));
        assert_eq!(segment_count(24, 4), 6);
        assert_eq!(segment_count(32, 16), 2);
        assert_eq!(segment_layers(10, 4), vec![1..5, 5..9, 9..11]);
    }

    #[test]
    fn header_round_trip_is_byte_identical() {
        let h = header();
        let (bytes, layout) = write_header_with_layout(&h);
        let (back, layout2) = parse_header(&bytes).unwrap();
        assert_eq!(back, h);
        assert_eq!(layout, layout2);
        assert_eq!(layout.end(), bytes.len());
        assert_eq!(write_header(&back), bytes);
    }

    #[test]
    fn header_rejects_magic_and_version() {
        let mut bytes = write_header(&header());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(parse_header(&bad), Err(Error::BadMagic)));
        bytes[4] += 1;
        assert!(matches!(parse_header(&bytes), Err(Error::UnsupportedVersion(2))));
    }

    #[test]
    fn unknown_arch_id_is_accepted() {
        let mut h = header();
        h.arch_id = 0xDEAD_BEEF;
        assert_eq!(parse_header(&write_header(&h)).unwrap().0.arch_id, 0xDEAD_BEEF);
    }

    #[test]
    fn plan_modes_follow_schedule_and_chain() {
        let mut s = shapes(4, 5);
        s[2][0].1 = vec![6, 4];
        s[2][1].1 = vec![4, 6];
        let p = Plan::build(&s, &spec(), 4).unwrap();
        let modes: Vec<bool> = p.layers.iter().map(|l| l.blocks[0].keyframe).collect();
        // layer 3 changes B; layer 4 differs from layer 3 again, so both restart the chain
        assert_eq!(modes, vec![true, false, true, true]);
        assert_eq!(p.layers[0].tensors.len(), 1);
        assert_eq!(p.record_count(), 8);
        assert_eq!(p.type_dims, vec![8]);
    }

    #[test]
    fn block_types_must_be_ordered_and_disjoint() {
        let mut t = spec();
        t.push(BlockTypeSpec { type_id: 1, name: String::new(), members: vec![BlockMember { tensor: "x".into(), axis: 0 }] });
        assert!(validate_block_types(&t).is_err());
        t[1].type_id = 9;
        t[1].members[0].tensor = "w_in".into();
        assert!(validate_block_types(&t).is_err());
    }

    #[test]
    fn trailer_round_trip() {
        let mut out = vec![0u8; 10];
        let e = vec![TrailerEntry { offset: 1, length: 9, clips: 2 }];
        write_trailer(&mut out, &e);
        assert_eq!(read_trailer(&out).unwrap(), (e, 10));
        let n = out.len();
        out[n - 1] = 0;
        assert!(read_trailer(&out).is_err());
    }
}
