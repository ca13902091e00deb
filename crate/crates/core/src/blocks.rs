//! Block extraction and layer assembly.
//!
//! A block type names one or more member tensors and, for each, the axis that
//! indexes blocks. Block `i` is the concatenation, in member order, of every
//! member's slice at index `i` along its block axis (each slice flattened
//! row-major).

use serde::{Deserialize, Serialize};

use crate::container::{LayerTensors, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockMember {
    pub tensor: String,
    pub axis: usize,
}

/// A permutation-symmetric block family, e.g. FFN hidden channels or attention heads.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockTypeSpec {
    pub type_id: u16,
    #[serde(default)]
    pub name: String,
    pub members: Vec<BlockMember>,
}

/// Geometry of one block type at one layer, derived from tensor shapes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockLayout {
    pub block_count: usize,
    /// Per-member slice shape (the tensor shape with the block axis removed).
    pub member_shapes: Vec<Vec<usize>>,
}

impl BlockLayout {
    pub fn member_lens(&self) -> impl Iterator<Item = usize> + '_ {
        self.member_shapes.iter().map(|s| s.iter().product::<usize>())
    }

    pub fn block_len(&self) -> usize {
        self.member_lens().sum()
    }
}

/// Resolve the layout of `spec` against tensor shapes. `Ok(None)` when none of the
/// members exist (the type is absent at this layer).
pub fn layout_for_shapes<'a, F>(spec: &BlockTypeSpec, shape_of: F) -> Result<Option<BlockLayout>>
where
    F: Fn(&str) -> Option<&'a [usize]>,
{
    if spec.members.is_empty() {
        return Err(Error::InvalidConfig(format!("block type {} has no members", spec.type_id)));
    }
    let present = spec.members.iter().filter(|m| shape_of(&m.tensor).is_some()).count();
    if present == 0 {
        return Ok(None);
    }
    let mut count = None;
    let mut member_shapes = Vec::with_capacity(spec.members.len());
    for m in &spec.members {
        let shape = shape_of(&m.tensor).ok_or_else(|| Error::MissingTensor(m.tensor.clone()))?;
        if m.axis >= shape.len() {
            return Err(Error::AxisOutOfRange {
                tensor: m.tensor.clone(),
                axis: m.axis,
                ndim: shape.len(),
            });
        }
        let b = shape[m.axis];
        match count {
            None => count = Some(b),
            Some(c) if c != b => {
                return Err(Error::BlockCountMismatch(format!(
                    "type {}: member `{}` has {} blocks along axis {}, expected {}",
                    spec.type_id, m.tensor, b, m.axis, c
                )))
            }
            _ => {}
        }
        let mut s = shape.to_vec();
        s.remove(m.axis);
        member_shapes.push(s);
    }
    Ok(Some(BlockLayout { block_count: count.unwrap(), member_shapes }))
}

pub fn layout_for_layer(layer: &LayerTensors, spec: &BlockTypeSpec) -> Result<Option<BlockLayout>> {
    layout_for_shapes(spec, |n| layer.get(n).map(|t| t.shape.as_slice()))
}

/// The blocks of one type at one layer. `blocks[i]` is a flattened block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSet {
    pub layer: usize,
    pub type_id: u16,
    pub blocks: Vec<Vec<f32>>,
}

impl BlockSet {
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn block_len(&self) -> usize {
        self.blocks.first().map_or(0, Vec::len)
    }

    pub fn flatten(&self) -> Vec<f32> {
        self.blocks.concat()
    }
}

fn axis_strides(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub fn extract_blocks(layer: &LayerTensors, spec: &BlockTypeSpec) -> Result<BlockSet> {
    let layout = layout_for_layer(layer, spec)?.ok_or_else(|| {
        Error::MissingTensor(spec.members.first().map(|m| m.tensor.clone()).unwrap_or_default())
    })?;
    let b = layout.block_count;
    let mut blocks = vec![Vec::with_capacity(layout.block_len()); b];
    for m in &spec.members {
        let t = layer.get(&m.tensor).expect("checked by layout");
        let (outer, n, inner) = axis_strides(&t.shape, m.axis);
        for (i, block) in blocks.iter_mut().enumerate() {
            for o in 0..outer {
                let start = (o * n + i) * inner;
                block.extend_from_slice(&t.data[start..start + inner]);
            }
        }
    }
    Ok(BlockSet { layer: layer.index, type_id: spec.type_id, blocks })
}

/// Scatter a block set back into the member tensors of `spec`.
fn scatter_blocks(
    bs: &BlockSet,
    spec: &BlockTypeSpec,
    shapes: &[(String, Vec<usize>)],
    out: &mut [(String, Option<Tensor>)],
) -> Result<()> {
    let layout = layout_for_shapes(spec, |n| {
        shapes.iter().find(|(k, _)| k == n).map(|(_, s)| s.as_slice())
    })?
    .ok_or_else(|| Error::MissingTensor(spec.members[0].tensor.clone()))?;
    if bs.blocks.len() != layout.block_count {
        return Err(Error::IncompleteBlockSet { expected: layout.block_count, got: bs.blocks.len() });
    }
    let block_len = layout.block_len();
    if let Some(bad) = bs.blocks.iter().find(|b| b.len() != block_len) {
        return Err(Error::ShapeMismatch(format!(
            "block of type {} has {} values, expected {}",
            spec.type_id,
            bad.len(),
            block_len
        )));
    }
    let mut member_offset = 0;
    for (m, mlen) in spec.members.iter().zip(layout.member_lens()) {
        let slot = out
            .iter_mut()
            .find(|(n, _)| *n == m.tensor)
            .ok_or_else(|| Error::MissingTensor(m.tensor.clone()))?;
        let shape = shapes.iter().find(|(n, _)| *n == m.tensor).unwrap().1.clone();
        let (outer, n, inner) = axis_strides(&shape, m.axis);
        let t = slot.1.get_or_insert_with(|| Tensor::zeros(shape));
        for (i, block) in bs.blocks.iter().enumerate() {
            let part = &block[member_offset..member_offset + mlen];
            for o in 0..outer {
                let start = (o * n + i) * inner;
                t.data[start..start + inner].copy_from_slice(&part[o * inner..(o + 1) * inner]);
            }
        }
        member_offset += mlen;
    }
    Ok(())
}

/// Rebuild a layer from its block sets plus any tensors not covered by a block type.
/// Output tensor order follows `shapes`.
pub fn assemble_layer(
    index: usize,
    block_sets: &[(&BlockTypeSpec, &BlockSet)],
    shapes: &[(String, Vec<usize>)],
    loose: Vec<(String, Tensor)>,
) -> Result<LayerTensors> {
    let mut out: Vec<(String, Option<Tensor>)> = shapes.iter().map(|(n, _)| (n.clone(), None)).collect();
    for (spec, bs) in block_sets {
        scatter_blocks(bs, spec, shapes, &mut out)?;
    }
    for (name, t) in loose {
        let (slot, shape) = out
            .iter_mut()
            .zip(shapes)
            .find(|((n, _), _)| *n == name)
            .map(|((_, s), (_, shape))| (s, shape))
            .ok_or_else(|| Error::MissingTensor(name.clone()))?;
        if &t.shape != shape {
            return Err(Error::ShapeMismatch(format!("tensor `{name}`: {:?} vs {:?}", t.shape, shape)));
        }
        *slot = Some(t);
    }
    let mut layer = LayerTensors::new(index);
    for (name, t) in out {
        let t = t.ok_or_else(|| Error::MissingTensor(name.clone()))?;
        layer.tensors.push((name, t));
    }
    Ok(layer)
}

/// A bijection on block indices, stored 0-based: `map[i]` is the source index placed at slot `i`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Permutation(Vec<u32>);

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Permutation((0..n as u32).collect())
    }

    pub fn new(map: Vec<u32>) -> Result<Self> {
        let n = map.len();
        let mut seen = vec![false; n];
        for (i, &v) in map.iter().enumerate() {
            let v = v as usize;
            if v >= n || seen[v] {
                return Err(Error::NotBijection(format!("entry {v} at position {i} (n={n})")));
            }
            seen[v] = true;
        }
        Ok(Permutation(map))
    }

    /// Build from 1-based images `(π(1), …, π(B))`.
    pub fn from_one_based(images: &[u32]) -> Result<Self> {
        if images.contains(&0) {
            return Err(Error::NotBijection("zero in 1-based permutation".into()));
        }
        Self::new(images.iter().map(|v| v - 1).collect())
    }

    pub fn to_one_based(&self) -> Vec<u32> {
        self.0.iter().map(|v| v + 1).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().enumerate().all(|(i, &v)| i as u32 == v)
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    pub fn get(&self, i: usize) -> usize {
        self.0[i] as usize
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0u32; self.0.len()];
        for (i, &v) in self.0.iter().enumerate() {
            inv[v as usize] = i as u32;
        }
        Permutation(inv)
    }

    /// `self ∘ other`: slot i takes `other[self[i]]`.
    pub fn compose(&self, other: &Permutation) -> Permutation {
        Permutation(self.0.iter().map(|&v| other.0[v as usize]).collect())
    }
}

pub fn invert_permutation(p: &Permutation) -> Permutation {
    p.inverse()
}

/// Output slot `i` receives input block `π(i)`.
pub fn apply_permutation(bs: &BlockSet, p: &Permutation) -> Result<BlockSet> {
    if p.len() != bs.blocks.len() {
        return Err(Error::LengthMismatch { expected: bs.blocks.len(), got: p.len() });
    }
    Ok(BlockSet {
        layer: bs.layer,
        type_id: bs.type_id,
        blocks: p.as_slice().iter().map(|&j| bs.blocks[j as usize].clone()).collect(),
    })
}

pub fn permute_vec<T: Clone>(items: &[T], p: &Permutation) -> Vec<T> {
    p.as_slice().iter().map(|&j| items[j as usize].clone()).collect()
}
