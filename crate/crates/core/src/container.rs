//! Portable tensor container (`.ckpt`).
//!
//! ```text
//! bytes 0..4   magic "MCTC"
//! bytes 4..8   manifest length n (u32 LE)
//! bytes 8..8+n UTF-8 JSON manifest
//! rest         f32 LE data region, tensors stored contiguously in manifest order
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CONTAINER_MAGIC: [u8; 4] = *b"MCTC";

/// A dense row-major f32 tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if shape.is_empty() || n == 0 {
            return Err(Error::ShapeMismatch(format!("empty shape {shape:?}")));
        }
        if n != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![0.0; n] }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

/// The named tensors of one layer, in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTensors {
    /// 1-based layer index.
    pub index: usize,
    pub tensors: Vec<(String, Tensor)>,
}

impl LayerTensors {
    pub fn new(index: usize) -> Self {
        LayerTensors { index, tensors: Vec::new() }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        let name = name.into();
        match self.get_mut(&name) {
            Some(t) => *t = tensor,
            None => self.tensors.push((name, tensor)),
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|(n, _)| n.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch_id: u32,
    pub layers: Vec<LayerTensors>,
}

impl Checkpoint {
    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidCheckpoint("checkpoint has no layers".into()));
        }
        for (pos, layer) in self.layers.iter().enumerate() {
            if layer.index != pos + 1 {
                return Err(Error::InvalidCheckpoint(format!(
                    "layer at position {} carries index {}",
                    pos + 1,
                    layer.index
                )));
            }
            if layer.tensors.is_empty() {
                return Err(Error::InvalidCheckpoint(format!("layer {} has no tensors", layer.index)));
            }
            for (k, (name, t)) in layer.tensors.iter().enumerate() {
                if layer.tensors[..k].iter().any(|(n, _)| n == name) {
                    return Err(Error::InvalidCheckpoint(format!(
                        "duplicate tensor `{name}` in layer {}",
                        layer.index
                    )));
                }
                let n: usize = t.shape.iter().product();
                if t.shape.is_empty() || n == 0 || n != t.data.len() {
                    return Err(Error::ShapeMismatch(format!(
                        "tensor `{name}` in layer {}: shape {:?} vs {} values",
                        layer.index,
                        t.shape,
                        t.data.len()
                    )));
                }
                if t.data.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteValue { layer: layer.index, tensor: name.clone() });
                }
            }
        }
        Ok(())
    }
}

/// Total number of scalar parameters.
pub fn param_count(ckpt: &Checkpoint) -> u64 {
    ckpt.layers
        .iter()
        .flat_map(|l| l.tensors.iter())
        .map(|(_, t)| t.shape.iter().product::<usize>() as u64)
        .sum()
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerManifest {
    index: usize,
    tensors: Vec<TensorSpec>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    arch_id: u32,
    layers: Vec<LayerManifest>,
}

/// Serialize a checkpoint into container bytes. Output is a pure function of the input.
pub fn to_bytes(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    ckpt.validate()?;
    let mut offset = 0u64;
    let mut layers = Vec::with_capacity(ckpt.layers.len());
    for layer in &ckpt.layers {
        let mut tensors = Vec::with_capacity(layer.tensors.len());
        for (name, t) in &layer.tensors {
            tensors.push(TensorSpec {
                name: name.clone(),
                shape: t.shape.clone(),
                dtype: "f32".into(),
                offset,
            });
            offset += 4 * t.data.len() as u64;
        }
        layers.push(LayerManifest { index: layer.index, tensors });
    }
    let manifest = serde_json::to_vec(&Manifest { arch_id: ckpt.arch_id, layers })
        .map_err(|e| Error::ManifestParse(e.to_string()))?;
    let manifest_len = u32::try_from(manifest.len())
        .map_err(|_| Error::InvalidCheckpoint("manifest larger than 4 GiB".into()))?;

    let mut out = Vec::with_capacity(8 + manifest.len() + offset as usize);
    out.extend_from_slice(&CONTAINER_MAGIC);
    out.extend_from_slice(&manifest_len.to_le_bytes());
    out.extend_from_slice(&manifest);
    for layer in &ckpt.layers {
        for (_, t) in &layer.tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

/// Parse container bytes, validating manifest, lengths and finiteness.
pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 8 {
        return Err(Error::ManifestParse("container shorter than its fixed prefix".into()));
    }
    if bytes[..4] != CONTAINER_MAGIC {
        return Err(Error::ManifestParse("bad container magic".into()));
    }
    let mlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let manifest_bytes = bytes
        .get(8..8 + mlen)
        .ok_or_else(|| Error::ManifestParse("manifest length exceeds file size".into()))?;
    let manifest: Manifest = serde_json::from_slice(manifest_bytes)
        .map_err(|e| Error::ManifestParse(e.to_string()))?;
    let data = &bytes[8 + mlen..];

    let mut expected = 0u64;
    for layer in &manifest.layers {
        for spec in &layer.tensors {
            if spec.dtype != "f32" {
                return Err(Error::UnsupportedDtype(spec.dtype.clone()));
            }
            if spec.offset != expected {
                return Err(Error::ManifestParse(format!(
                    "tensor `{}` offset {} is not contiguous (expected {})",
                    spec.name, spec.offset, expected
                )));
            }
            let n = spec
                .shape
                .iter()
                .try_fold(1u64, |acc, &d| acc.checked_mul(d as u64))
                .filter(|&n| n > 0 && !spec.shape.is_empty())
                .ok_or_else(|| {
                    Error::ShapeMismatch(format!("tensor `{}` has invalid shape {:?}", spec.name, spec.shape))
                })?;
            expected = n
                .checked_mul(4)
                .and_then(|b| b.checked_add(expected))
                .ok_or_else(|| Error::ShapeMismatch("declared size overflows".into()))?;
        }
    }
    if expected != data.len() as u64 {
        return Err(Error::ShapeMismatch(format!(
            "manifest declares {} data bytes, file holds {}",
            expected,
            data.len()
        )));
    }

    let mut layers = Vec::with_capacity(manifest.layers.len());
    for lm in manifest.layers {
        let mut layer = LayerTensors::new(lm.index);
        for spec in lm.tensors {
            let start = spec.offset as usize;
            let n: usize = spec.shape.iter().product();
            let values: Vec<f32> = data[start..start + 4 * n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteValue { layer: lm.index, tensor: spec.name });
            }
            layer.tensors.push((spec.name, Tensor { shape: spec.shape, data: values }));
        }
        layers.push(layer);
    }
    let ckpt = Checkpoint { arch_id: manifest.arch_id, layers };
    ckpt.validate()?;
    Ok(ckpt)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.display().to_string()),
        _ => Error::Io(e),
    })?;
    from_bytes(&bytes)
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let bytes = to_bytes(ckpt)?;
    fs::write(path, bytes)?;
    Ok(())
}
