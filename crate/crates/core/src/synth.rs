//! Synthetic checkpoints with known structure, used by tests, benchmarks and `selftest`.
//!
//! The drift suite evolves aligned blocks as `U_ℓ = ρ·Q·U_{ℓ−1} + ε` with a fixed
//! near-identity rotation `Q`, `ρ = √(1−σ²)` and per-block noise of norm `≈ σ·‖U_{ℓ−1}‖`,
//! then stores each layer under a planted block permutation.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::align::{random_permutation, ActivationSummary};
use crate::blocks::{apply_permutation, assemble_layer, BlockMember, BlockSet, BlockTypeSpec, Permutation};
use crate::codec::ActivationSet;
use crate::container::{Checkpoint, Tensor};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct DriftConfig {
    pub layers: usize,
    pub blocks: usize,
    /// Row length of the `w_in` member.
    pub d_in: usize,
    /// Column length of the `w_out` member.
    pub d_out: usize,
    /// Relative drift noise σ.
    pub noise: f64,
    /// Magnitude of the per-layer rotation generator.
    pub rotation: f64,
    /// Element std of layer 1.
    pub scale: f64,
    pub planted: bool,
    /// Length of an uncovered `norm` tensor per layer (0 for none).
    pub norm_len: usize,
    /// Activation summary length per block (0 for none).
    pub act_dim: usize,
    pub seed: u64,
}

impl Default for DriftConfig {
    fn default() -> Self {
        DriftConfig {
            layers: 24,
            blocks: 64,
            d_in: 8,
            d_out: 8,
            noise: 0.05,
            rotation: 0.1,
            scale: 0.05,
            planted: true,
            norm_len: 8,
            act_dim: 0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DriftSuite {
    pub checkpoint: Checkpoint,
    pub spec: BlockTypeSpec,
    /// Planted permutation per layer: `apply_permutation(canonical_ℓ, π_ℓ)` is the aligned truth.
    pub planted: Vec<Permutation>,
    /// Aligned truth per layer.
    pub aligned: Vec<BlockSet>,
    pub activations: ActivationSet,
}

pub const DRIFT_TYPE_ID: u16 = 0;

pub fn drift_spec() -> BlockTypeSpec {
    BlockTypeSpec {
        type_id: DRIFT_TYPE_ID,
        name: "ffn".into(),
        members: vec![
            BlockMember { tensor: "w_in".into(), axis: 0 },
            BlockMember { tensor: "w_out".into(), axis: 1 },
        ],
    }
}

/// Orthonormalize the columns of `I + G`, `G_ij ~ N(0, (r/√d)²)`.
fn near_identity_rotation(d: usize, r: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let sd = r / (d as f64).sqrt();
    let mut m: Vec<f64> = (0..d * d)
        .map(|k| {
            let g: f64 = StandardNormal.sample(rng);
            g * sd + if k / d == k % d { 1.0 } else { 0.0 }
        })
        .collect();
    for j in 0..d {
        for k in 0..j {
            let dot: f64 = (0..d).map(|i| m[i * d + j] * m[i * d + k]).sum();
            for i in 0..d {
                m[i * d + j] -= dot * m[i * d + k];
            }
        }
        let norm = (0..d).map(|i| m[i * d + j].powi(2)).sum::<f64>().sqrt();
        for i in 0..d {
            m[i * d + j] /= norm;
        }
    }
    m
}

fn drift_step(u: &[f64], q: &[f64], rho: f64, noise: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let d = u.len();
    let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    let sd = noise * norm / (d as f64).sqrt();
    (0..d)
        .map(|i| {
            let e: f64 = StandardNormal.sample(rng);
            rho * (0..d).map(|k| q[i * d + k] * u[k]).sum::<f64>() + sd * e
        })
        .collect()
}

pub fn drift_checkpoint(cfg: &DriftConfig) -> Result<DriftSuite> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6472_6966_7400);
    let d = cfg.d_in + cfg.d_out;
    let q = near_identity_rotation(d, cfg.rotation, &mut rng);
    let rho = (1.0 - cfg.noise * cfg.noise).max(0.0).sqrt();
    let init = Normal::new(0.0, cfg.scale).expect("finite scale");
    let mut u: Vec<Vec<f64>> = (0..cfg.blocks).map(|_| (0..d).map(|_| init.sample(&mut rng)).collect()).collect();
    let (qa, mut a) = if cfg.act_dim > 0 {
        let qa = near_identity_rotation(cfg.act_dim, cfg.rotation, &mut rng);
        let a: Vec<Vec<f64>> = (0..cfg.blocks).map(|_| (0..cfg.act_dim).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
        (qa, a)
    } else {
        (Vec::new(), Vec::new())
    };
    let spec = drift_spec();
    let shapes = vec![
        ("w_in".to_string(), vec![cfg.blocks, cfg.d_in]),
        ("w_out".to_string(), vec![cfg.d_out, cfg.blocks]),
    ];
    let mut layers = Vec::with_capacity(cfg.layers);
    let mut planted = Vec::with_capacity(cfg.layers);
    let mut aligned = Vec::with_capacity(cfg.layers);
    let mut activations = ActivationSet::new();
    for l in 1..=cfg.layers {
        if l > 1 {
            u = u.iter().map(|b| drift_step(b, &q, rho, cfg.noise, &mut rng)).collect();
            if cfg.act_dim > 0 {
                a = a.iter().map(|b| drift_step(b, &qa, rho, cfg.noise, &mut rng)).collect();
            }
        }
        let truth = BlockSet {
            layer: l,
            type_id: DRIFT_TYPE_ID,
            blocks: u.iter().map(|b| b.iter().map(|&v| v as f32).collect()).collect(),
        };
        let pi = if cfg.planted && l > 1 {
            random_permutation(cfg.blocks, rng.gen())
        } else {
            Permutation::identity(cfg.blocks)
        };
        // canonical[π(i)] = truth[i]
        let canonical = apply_permutation(&truth, &pi.inverse())?;
        let mut shapes_l = shapes.clone();
        let mut loose = Vec::new();
        if cfg.norm_len > 0 {
            let vals: Vec<f32> =
                (0..cfg.norm_len).map(|_| 1.0 + 0.1 * rng.sample::<f64, _>(StandardNormal) as f32).collect();
            shapes_l.push(("norm".to_string(), vec![cfg.norm_len]));
            loose.push(("norm".to_string(), Tensor::new(vec![cfg.norm_len], vals)?));
        }
        layers.push(assemble_layer(l, &[(&spec, &canonical)], &shapes_l, loose)?);
        if cfg.act_dim > 0 {
            let means: Vec<Vec<f32>> = a.iter().map(|b| b.iter().map(|&v| v as f32).collect()).collect();
            let canon_means = crate::blocks::permute_vec(&means, &pi.inverse());
            activations.insert(l, DRIFT_TYPE_ID, ActivationSummary { means: canon_means });
        }
        planted.push(pi);
        aligned.push(truth);
    }
    Ok(DriftSuite { checkpoint: Checkpoint { arch_id: 0x5359_4e54, layers }, spec, planted, aligned, activations })
}

/// Activation sidecar container holding `act.<type_id>` tensors of `[B, d]` per layer.
pub fn activation_sidecar(acts: &ActivationSet, layers: usize, types: &[BlockTypeSpec]) -> Result<Checkpoint> {
    let mut out = Vec::with_capacity(layers);
    for l in 1..=layers {
        let mut layer = crate::container::LayerTensors::new(l);
        for t in types {
            if let Some(a) = acts.get(l, t.type_id) {
                let d = a.means.first().map_or(0, Vec::len);
                layer.insert(ActivationSet::tensor_name(t.type_id), Tensor::new(vec![a.means.len(), d], a.means.concat())?);
            }
        }
        if layer.tensors.is_empty() {
            layer.insert("act.none", Tensor::new(vec![1], vec![0.0])?);
        }
        out.push(layer);
    }
    Ok(Checkpoint { arch_id: 0, layers: out })
}

/// A randomized multi-type checkpoint: 2–32 layers, 1–4 block types with 1–2 members
/// on varied axes, occasional absent types and block-count changes, and a few uncovered
/// tensors. At most `max_params` parameters.
pub fn random_checkpoint(seed: u64, max_params: usize) -> Result<(Checkpoint, Vec<BlockTypeSpec>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7261_6e64);
    let num_layers = rng.gen_range(2..=32);
    let num_types = rng.gen_range(1..=4);
    struct TypeGeo {
        spec: BlockTypeSpec,
        /// Per member: slice shape with a placeholder for the block axis.
        dims: Vec<Vec<usize>>,
        base_b: usize,
    }
    let mut geos = Vec::with_capacity(num_types);
    for t in 0..num_types {
        let nm = rng.gen_range(1..=2);
        let mut members = Vec::new();
        let mut dims = Vec::new();
        for k in 0..nm {
            let nd = rng.gen_range(1..=3);
            let shape: Vec<usize> = (0..nd).map(|_| rng.gen_range(1..=6)).collect();
            let axis = rng.gen_range(0..nd);
            members.push(BlockMember { tensor: format!("t{t}.m{k}"), axis });
            dims.push(shape);
        }
        geos.push(TypeGeo {
            spec: BlockTypeSpec { type_id: (t as u16) * 3 + 1, name: format!("type{t}"), members },
            dims,
            base_b: rng.gen_range(2..=24),
        });
    }
    let per_block: usize = geos
        .iter()
        .map(|g| g.dims.iter().zip(&g.spec.members).map(|(s, m)| s.iter().product::<usize>() / s[m.axis]).sum::<usize>() * g.base_b)
        .sum();
    let budget = (max_params / num_layers).saturating_sub(64).max(8);
    if per_block > budget {
        let f = budget as f64 / per_block as f64;
        for g in &mut geos {
            g.base_b = ((g.base_b as f64 * f).floor() as usize).max(2);
        }
    }
    let loose_shapes: Vec<Vec<usize>> =
        (0..rng.gen_range(0..=2)).map(|_| if rng.gen_bool(0.5) { vec![rng.gen_range(1..=16)] } else { vec![rng.gen_range(1..=4), rng.gen_range(1..=8)] }).collect();

    let mut state: Vec<Option<Vec<Vec<f32>>>> = vec![None; num_types];
    let mut layers = Vec::with_capacity(num_layers);
    for l in 1..=num_layers {
        let mut shapes: Vec<(String, Vec<usize>)> = Vec::new();
        let mut sets: Vec<(usize, BlockSet)> = Vec::new();
        for (t, g) in geos.iter().enumerate() {
            let absent = l > 1 && rng.gen_bool(0.08) && num_types > 1;
            if absent {
                state[t] = None;
                continue;
            }
            let b = if rng.gen_bool(0.05) { g.base_b + 1 } else { g.base_b };
            for (m, s) in g.spec.members.iter().zip(&g.dims) {
                let mut shape = s.clone();
                shape[m.axis] = b;
                shapes.push((m.tensor.clone(), shape));
            }
            let bl: usize = g.dims.iter().zip(&g.spec.members).map(|(s, m)| s.iter().product::<usize>() / s[m.axis]).sum();
            let scale = 0.02 * (1.0 + t as f32);
            let blocks = match &state[t] {
                Some(prev) if prev.len() == b => prev
                    .iter()
                    .map(|blk| blk.iter().map(|&v| 0.98 * v + 0.01 * rng.sample::<f32, _>(StandardNormal)).collect())
                    .collect(),
                _ => (0..b).map(|_| (0..bl).map(|_| scale * rng.sample::<f32, _>(StandardNormal)).collect()).collect(),
            };
            state[t] = Some(blocks);
            let mut order: Vec<u32> = (0..b as u32).collect();
            order.shuffle(&mut rng);
            let truth = BlockSet { layer: l, type_id: g.spec.type_id, blocks: state[t].clone().unwrap() };
            let canonical = apply_permutation(&truth, &Permutation::new(order)?.inverse())?;
            sets.push((t, canonical));
        }
        let mut loose = Vec::new();
        for (j, s) in loose_shapes.iter().enumerate() {
            let n: usize = s.iter().product();
            let name = format!("loose{j}");
            shapes.push((name.clone(), s.clone()));
            loose.push((name, Tensor::new(s.clone(), (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect())?));
        }
        if shapes.is_empty() {
            shapes.push(("pad".into(), vec![1]));
            loose.push(("pad".into(), Tensor::new(vec![1], vec![0.5])?));
        }
        let pairs: Vec<(&BlockTypeSpec, &BlockSet)> = sets.iter().map(|(t, bs)| (&geos[*t].spec, bs)).collect();
        layers.push(assemble_layer(l, &pairs, &shapes, loose)?);
    }
    Ok((Checkpoint { arch_id: rng.gen(), layers }, geos.into_iter().map(|g| g.spec).collect()))
}
