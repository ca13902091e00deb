//! Encoder: alignment, predictor fitting, the closed decode loop, and serialization.

use std::collections::HashMap;

use log::{debug, info};
use rayon::prelude::*;

use crate::align::{
    align_layer_pair, random_permutation, residual_energy_costs, solve_assignment_seeded, stream_seed,
    ActivationSummary,
};
use crate::blocks::{apply_permutation, assemble_layer, extract_blocks, permute_vec, BlockSet, BlockTypeSpec, Permutation};
use crate::codec::config::CodecConfig;
use crate::codec::format::{
    write_header_with_layout, write_qinfo, write_trailer, EntropySpec, Header, Plan, QInfoWire, SharedQuant,
    TrailerEntry, ENTROPY_MODEL_LOGISTIC, FLAG_FIXED_CODES, FLAG_FIXED_PERMS, FLAG_NO_PREDICTOR, KIND_BLOCK,
    KIND_TENSOR, MODE_KEYFRAME, MODE_PREDICTIVE, PERM_FIXED, PERM_NONE, PERM_RANGE, VERSION,
};
use crate::codec::records::{add_f32, encode_codes, flatten, split_blocks, sub_f32};
use crate::codec::wire::{put_u16, put_u32, put_u8};
use crate::container::{Checkpoint, Tensor};
use crate::entropy::model::{build_context, codelength_proxy, fit_entropy_model, EntropyModel, GroupSample, SymbolContext};
use crate::entropy::PROB_BITS;
use crate::error::{Error, RecordId, RecordUnit, Result};
use crate::permcode::{delta_digits, encode_perm_fixed, encode_perm_stream, fit_perm_model, lehmer_encode, PermModelParams};
use crate::predictor::{Predictor, RateTerm, TrainSample, Trainer};
use crate::quant::{dequantize, init_with_rule, quantize, QuantizerParams, StepRule, STEP_FLOOR};

/// Per-block activation summaries keyed by (1-based layer, type id).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ActivationSet {
    map: HashMap<(usize, u16), ActivationSummary>,
}

impl ActivationSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, layer: usize, type_id: u16, summary: ActivationSummary) {
        self.map.insert((layer, type_id), summary);
    }

    pub fn get(&self, layer: usize, type_id: u16) -> Option<&ActivationSummary> {
        self.map.get(&(layer, type_id))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Sidecar container: layer ℓ holds tensor `act.<type_id>` of shape `[B]` or `[B, d]`.
    pub fn from_checkpoint(sidecar: &Checkpoint, types: &[BlockTypeSpec]) -> Result<Self> {
        let mut set = ActivationSet::new();
        for layer in &sidecar.layers {
            for t in types {
                let Some(tensor) = layer.get(&Self::tensor_name(t.type_id)) else { continue };
                let b = tensor.shape[0];
                let d = tensor.numel() / b;
                let means = tensor.data.chunks(d).map(<[f32]>::to_vec).collect();
                set.insert(layer.index, t.type_id, ActivationSummary { means });
            }
        }
        Ok(set)
    }

    pub fn tensor_name(type_id: u16) -> String {
        format!("act.{type_id}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordStat {
    pub id: RecordId,
    pub keyframe: bool,
    pub clips: u32,
    pub symbols: u64,
    /// Ideal codelength of the record's codes under ψ (realized bits for fixed-length coding).
    pub proxy_bits: f64,
    pub bytes: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EncodeStats {
    /// Code NLL proxy summed over every record.
    pub proxy_bits: f64,
    pub symbols: u64,
    pub clip_count: u64,
    /// Mean squared reconstruction error per parameter.
    pub mse: f64,
    pub predictor_losses: Vec<f64>,
    pub entropy_nll_bits: Vec<f64>,
    pub predictor_calls: u64,
    /// Predictor invocations on keyframe records (structurally zero).
    pub keyframe_predictor_calls: u64,
    /// Non-identity alignments replaced by the identity because they did not pay for themselves.
    pub gated_to_identity: usize,
    pub permutations: Vec<(usize, u16, Permutation)>,
    pub records: Vec<RecordStat>,
}

#[derive(Debug, Clone)]
pub struct EncodeOutput {
    pub bytes: Vec<u8>,
    /// The encoder's own decoded reference; the decoder reproduces it bit-exactly.
    pub reconstruction: Checkpoint,
    pub stats: EncodeStats,
}

struct Alignment {
    perms: Vec<Vec<Permutation>>,
    aligned: Vec<Vec<BlockSet>>,
    gated: usize,
}

/// What non-keyframe alignment is scored against.
#[derive(Clone, Copy)]
enum AlignTarget<'a> {
    /// Similarity to the previous aligned layer.
    Similarity,
    /// Residual energy against predictions from the previous aligned layer
    /// (`None` is identity prediction).
    Predicted(Option<&'a Predictor>),
}

fn empirical_bits(hist: &HashMap<i64, u64>) -> f64 {
    let n: u64 = hist.values().sum();
    let nf = n as f64;
    hist.values().map(|&c| -(c as f64) * (c as f64 / nf).log2()).sum()
}

fn residual_bits(cand: &BlockSet, reference: &[Vec<f32>], perm: &Permutation, step: f64) -> f64 {
    let mut hist: HashMap<i64, u64> = HashMap::new();
    for (i, r) in reference.iter().enumerate() {
        for (&x, &p) in cand.blocks[perm.get(i)].iter().zip(r) {
            *hist.entry(((x as f64 - p as f64) / step).round() as i64).or_default() += 1;
        }
    }
    empirical_bits(&hist)
}

fn perm_cost_bits(p: &Permutation, threshold: u32) -> Result<f64> {
    let digits = lehmer_encode(p);
    let model = fit_perm_model(&[&digits], &[], threshold);
    Ok(8.0 * encode_perm_stream(&digits, None, &model)?.len() as f64)
}

/// Keep `perm` only when the estimated residual saving exceeds its extra side information.
fn gate_keeps(perm: &Permutation, cand: &BlockSet, reference: &[Vec<f32>], gamma: f64, threshold: u32) -> Result<bool> {
    let id = Permutation::identity(cand.len());
    let mut sum = 0.0;
    let mut sq = 0.0;
    let mut n = 0.0;
    for (c, r) in cand.blocks.iter().zip(reference) {
        for (&x, &p) in c.iter().zip(r) {
            let d = x as f64 - p as f64;
            sum += d;
            sq += d * d;
            n += 1.0;
        }
    }
    let var = (sq / n - (sum / n).powi(2)).max(0.0);
    if var == 0.0 {
        return Ok(false);
    }
    let step = gamma * var.sqrt();
    let saving = residual_bits(cand, reference, &id, step) - residual_bits(cand, reference, perm, step);
    let cost = perm_cost_bits(perm, threshold)? - perm_cost_bits(&id, threshold)?;
    Ok(saving > cost)
}

fn align_all(
    plan: &Plan,
    canon: &[Vec<BlockSet>],
    cfg: &CodecConfig,
    acts: Option<&ActivationSet>,
    target: AlignTarget,
) -> Result<Alignment> {
    let ab = &cfg.ablation;
    let mut perms: Vec<Vec<Permutation>> = Vec::with_capacity(plan.num_layers());
    let mut aligned: Vec<Vec<BlockSet>> = Vec::with_capacity(plan.num_layers());
    let mut aligned_acts: Vec<Vec<Option<ActivationSummary>>> = Vec::with_capacity(plan.num_layers());
    let mut gated = 0;
    for (li, lp) in plan.layers.iter().enumerate() {
        let mut lperm = Vec::with_capacity(lp.blocks.len());
        let mut lal = Vec::with_capacity(lp.blocks.len());
        let mut lact = Vec::with_capacity(lp.blocks.len());
        for (bi, rec) in lp.blocks.iter().enumerate() {
            let cand = &canon[li][bi];
            let n = cand.len();
            let cand_act = acts.and_then(|a| a.get(lp.index, rec.type_id)).filter(|a| a.means.len() == n);
            let perm = if rec.keyframe || n <= 1 || ab.no_alignment {
                Permutation::identity(n)
            } else if ab.random_alignment {
                random_permutation(n, cfg.seed ^ cfg.align.seed ^ stream_seed(lp.index, rec.type_id))
            } else {
                let (pbi, _) = plan.layers[li - 1].block_by_slot(rec.slot).expect("predictive record has a predecessor");
                let reference = &aligned[li - 1][pbi];
                let (perm, gate_ref) = match (target, ab.residual_energy_alignment) {
                    (AlignTarget::Predicted(theta), true) => {
                        let preds = match theta {
                            Some(t) => t.predict_blocks(&reference.blocks, lp.index, rec.slot)?,
                            None => reference.blocks.clone(),
                        };
                        let pset = BlockSet { layer: lp.index, type_id: rec.type_id, blocks: preds };
                        let s = residual_energy_costs(cand, &pset)?;
                        let perm = solve_assignment_seeded(&s, &cfg.align, stream_seed(lp.index, rec.type_id))?;
                        (perm, pset.blocks)
                    }
                    _ => {
                        let ref_act = aligned_acts[li - 1][pbi].as_ref();
                        let (perm, _) = align_layer_pair(reference, cand, ref_act, cand_act, &cfg.align)?;
                        (perm, reference.blocks.clone())
                    }
                };
                if cfg.alignment_gating
                    && !perm.is_identity()
                    && !gate_keeps(&perm, cand, &gate_ref, cfg.quant.gamma, cfg.perm_threshold)?
                {
                    gated += 1;
                    Permutation::identity(n)
                } else {
                    perm
                }
            };
            lal.push(apply_permutation(cand, &perm)?);
            lact.push(cand_act.map(|a| ActivationSummary { means: permute_vec(&a.means, &perm) }));
            lperm.push(perm);
        }
        perms.push(lperm);
        aligned.push(lal);
        aligned_acts.push(lact);
    }
    Ok(Alignment { perms, aligned, gated })
}

fn block_std(x: &[f32], p: &[f32]) -> f64 {
    let n = x.len() as f64;
    let d: Vec<f64> = x.iter().zip(p).map(|(&a, &b)| a as f64 - b as f64).collect();
    let mean = d.iter().sum::<f64>() / n;
    (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Teacher-forced pairs (aligned ℓ−1 block → aligned ℓ block) for every predictive record.
fn train_samples(plan: &Plan, al: &Alignment, cfg: &CodecConfig) -> Vec<TrainSample> {
    let mut out = Vec::new();
    for (li, lp) in plan.layers.iter().enumerate() {
        for (bi, rec) in lp.blocks.iter().enumerate() {
            if rec.keyframe {
                continue;
            }
            let (pbi, _) = plan.layers[li - 1].block_by_slot(rec.slot).expect("predecessor");
            let prev = &al.aligned[li - 1][pbi];
            for (p, t) in prev.blocks.iter().zip(&al.aligned[li][bi].blocks) {
                let step = match cfg.quant.residual_step {
                    Some(s) => s,
                    None => ((cfg.quant.gamma * block_std(t, p)) as f32).max(STEP_FLOOR),
                };
                out.push(TrainSample { layer: lp.index, slot: rec.slot, prev: p.clone(), target: t.clone(), step });
            }
        }
    }
    out
}

fn input_rms(plan: &Plan, canon: &[Vec<BlockSet>]) -> Vec<f64> {
    let mut acc = vec![(0.0f64, 0u64); plan.type_dims.len()];
    for (li, lp) in plan.layers.iter().enumerate() {
        for (bi, rec) in lp.blocks.iter().enumerate() {
            for b in &canon[li][bi].blocks {
                for &v in b {
                    acc[rec.slot].0 += v as f64 * v as f64;
                    acc[rec.slot].1 += 1;
                }
            }
        }
    }
    acc.iter()
        .map(|&(s, n)| {
            let r = if n == 0 { 0.0 } else { (s / n as f64).sqrt() };
            if r > 0.0 {
                r
            } else {
                1.0
            }
        })
        .collect()
}

struct CodedRecord {
    id: RecordId,
    keyframe: bool,
    slot: usize,
    perm: Option<Permutation>,
    qinfo: QInfoWire,
    codes: Vec<i32>,
    ctxs: Vec<SymbolContext>,
    group_len: usize,
    clips: usize,
}

fn inline_qinfo(q: &QuantizerParams) -> QInfoWire {
    QInfoWire::Inline { q_max: q.q_max as u16, group_len: q.group_len as u32, steps: q.step.clone(), means: q.mean.clone() }
}

fn shared_step(cfg: &CodecConfig) -> Option<f32> {
    match (cfg.quant.residual_step, cfg.quant.learned_means) {
        (Some(s), false) => Some(s.max(STEP_FLOOR)),
        _ => None,
    }
}

type Prepared = (Vec<BlockTypeSpec>, Vec<Vec<(String, Vec<usize>)>>, Plan, Vec<Vec<BlockSet>>);

fn prepare(ckpt: &Checkpoint, cfg: &CodecConfig) -> Result<Prepared> {
    cfg.validate()?;
    ckpt.validate()?;
    let mut types = cfg.block_types.clone();
    types.sort_by_key(|t| t.type_id);
    let shapes: Vec<Vec<(String, Vec<usize>)>> = ckpt
        .layers
        .iter()
        .map(|l| l.tensors.iter().map(|(n, t)| (n.clone(), t.shape.clone())).collect())
        .collect();
    let plan = Plan::build(&shapes, &types, cfg.keyframe_interval as usize)?;
    let canon: Vec<Vec<BlockSet>> = plan
        .layers
        .par_iter()
        .zip(&ckpt.layers)
        .map(|(lp, layer)| lp.blocks.iter().map(|b| extract_blocks(layer, &types[b.slot])).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    Ok((types, shapes, plan, canon))
}

/// Train θ on the teacher-forced pairs of `al`. With residual-energy alignment the
/// alignment is recomputed against the current θ every `recompute_period` steps.
fn fit_theta(
    plan: &Plan,
    canon: &[Vec<BlockSet>],
    al: &mut Alignment,
    cfg: &CodecConfig,
    acts: Option<&ActivationSet>,
) -> Result<(Predictor, Vec<f64>)> {
    let rms = input_rms(plan, canon);
    let mut theta =
        Predictor::copy_init(cfg.predictor, plan.num_layers(), plan.type_dims.clone(), &rms, cfg.train.seed ^ cfg.seed);
    let mut train_cfg = cfg.train.clone();
    train_cfg.seed ^= cfg.seed;
    let mut trainer = Trainer::new(&theta, train_cfg);
    let rate = (cfg.lambda > 0.0).then_some(RateTerm { lambda: cfg.lambda });
    let mut samples = train_samples(plan, al, cfg);
    if cfg.ablation.residual_energy_alignment {
        while !trainer.done() {
            trainer.run(&mut theta, &samples, cfg.recompute_period, rate)?;
            let mut snapshot = theta.clone();
            snapshot.params.round_to_f32();
            *al = align_all(plan, canon, cfg, acts, AlignTarget::Predicted(Some(&snapshot)))?;
            samples = train_samples(plan, al, cfg);
        }
    } else {
        let total = trainer.cfg.total_steps();
        trainer.run(&mut theta, &samples, total, rate)?;
    }
    theta.params.round_to_f32();
    info!("predictor trained on {} pairs, {} steps", samples.len(), trainer.step());
    Ok((theta, trainer.losses.clone()))
}

/// Canonical and aligned block sets of every record, as the encoder sees them.
#[derive(Debug, Clone)]
pub struct AlignmentView {
    pub plan: Plan,
    pub canonical: Vec<Vec<BlockSet>>,
    pub aligned: Vec<Vec<BlockSet>>,
    pub perms: Vec<Vec<Permutation>>,
    /// Trained on the aligned sequence; `None` without predictive records or with `no_predictor`.
    pub predictor: Option<Predictor>,
    /// Trained the same way on the canonical (identity-aligned) sequence.
    pub identity_predictor: Option<Predictor>,
}

/// Run the encoder's alignment and predictor fitting without quantizing or coding.
pub fn alignment_view(ckpt: &Checkpoint, cfg: &CodecConfig, acts: Option<&ActivationSet>) -> Result<AlignmentView> {
    let (_, _, plan, canon) = prepare(ckpt, cfg)?;
    let mut al = align_all(&plan, &canon, cfg, acts, AlignTarget::Similarity)?;
    let has_predictive = plan.layers.iter().any(|l| l.blocks.iter().any(|b| !b.keyframe));
    let fit = has_predictive && !cfg.ablation.no_predictor;
    let predictor = if fit {
        Some(fit_theta(&plan, &canon, &mut al, cfg, acts)?.0)
    } else {
        if has_predictive && cfg.ablation.residual_energy_alignment {
            al = align_all(&plan, &canon, cfg, acts, AlignTarget::Predicted(None))?;
        }
        None
    };
    let identity_predictor = if fit {
        let mut id_cfg = cfg.clone();
        id_cfg.ablation.no_alignment = true;
        id_cfg.ablation.random_alignment = false;
        id_cfg.ablation.residual_energy_alignment = false;
        let mut id_al = align_all(&plan, &canon, &id_cfg, None, AlignTarget::Similarity)?;
        Some(fit_theta(&plan, &canon, &mut id_al, &id_cfg, None)?.0)
    } else {
        None
    };
    Ok(AlignmentView { plan, canonical: canon, aligned: al.aligned, perms: al.perms, predictor, identity_predictor })
}

/// Encode `ckpt` per the configured pipeline. Deterministic for a given config and seed.
pub fn encode_checkpoint(ckpt: &Checkpoint, cfg: &CodecConfig, acts: Option<&ActivationSet>) -> Result<EncodeOutput> {
    let (types, shapes, plan, canon) = prepare(ckpt, cfg)?;
    let num_layers = plan.num_layers();
    let mut al = align_all(&plan, &canon, cfg, acts, AlignTarget::Similarity)?;
    let has_predictive = plan.layers.iter().any(|l| l.blocks.iter().any(|b| !b.keyframe));
    let mut stats = EncodeStats::default();

    let theta = if has_predictive && !cfg.ablation.no_predictor {
        let (theta, losses) = fit_theta(&plan, &canon, &mut al, cfg, acts)?;
        stats.predictor_losses = losses;
        Some(theta)
    } else {
        if has_predictive && cfg.ablation.residual_energy_alignment {
            al = align_all(&plan, &canon, cfg, acts, AlignTarget::Predicted(None))?;
        }
        None
    };
    stats.gated_to_identity = al.gated;

    // Closed decode loop: residuals are formed against predictions from decoded context.
    let q = &cfg.quant;
    let residual_rule = match shared_step(cfg) {
        Some(step) => StepRule::Fixed { step },
        None => q.residual_rule(),
    };
    let mut coded: Vec<CodedRecord> = Vec::with_capacity(plan.record_count());
    let mut decoded: Vec<Vec<Vec<Vec<f32>>>> = Vec::with_capacity(num_layers);
    let mut recon_layers = Vec::with_capacity(num_layers);
    for (li, lp) in plan.layers.iter().enumerate() {
        let mut dec_blocks = Vec::with_capacity(lp.blocks.len());
        let mut canon_dec = Vec::with_capacity(lp.blocks.len());
        for (bi, rec) in lp.blocks.iter().enumerate() {
            let cur = &al.aligned[li][bi];
            let bl = rec.layout.block_len();
            let flat = flatten(&cur.blocks);
            let id = RecordId { layer: lp.index as u32, unit: RecordUnit::Block(rec.type_id) };
            let (qp, codes, clips, blocks, ctxs) = if rec.keyframe {
                let qp = init_with_rule(&flat, bl, q.keyframe_rule, q.q_max_keyframe, q.learned_means)?;
                let (codes, clips) = quantize(&flat, &qp)?;
                let deq = dequantize(&codes, &qp)?;
                let ctxs = build_context(lp.index, rec.slot, &qp, None, true)?;
                (qp, codes, clips, split_blocks(&deq, bl), ctxs)
            } else {
                let (pbi, _) = plan.layers[li - 1].block_by_slot(rec.slot).expect("predecessor");
                let prev: &Vec<Vec<f32>> = &decoded[li - 1][pbi];
                let preds = match &theta {
                    Some(t) => {
                        stats.predictor_calls += prev.len() as u64;
                        t.predict_blocks(prev, lp.index, rec.slot)?
                    }
                    None => prev.clone(),
                };
                let pflat = flatten(&preds);
                let r = sub_f32(&flat, &pflat);
                let qp = init_with_rule(&r, bl, residual_rule, q.q_max_residual, q.learned_means)?;
                let (codes, clips) = quantize(&r, &qp)?;
                let deq = dequantize(&codes, &qp)?;
                let ctxs = build_context(lp.index, rec.slot, &qp, Some(&pflat), false)?;
                (qp, codes, clips, split_blocks(&add_f32(&pflat, &deq), bl), ctxs)
            };
            let qinfo = if !rec.keyframe && shared_step(cfg).is_some() {
                QInfoWire::Shared { type_id: rec.type_id }
            } else {
                inline_qinfo(&qp)
            };
            let perm = al.perms[li][bi].clone();
            canon_dec.push(apply_permutation(
                &BlockSet { layer: lp.index, type_id: rec.type_id, blocks: blocks.clone() },
                &perm.inverse(),
            )?);
            stats.permutations.push((lp.index, rec.type_id, perm.clone()));
            coded.push(CodedRecord {
                id,
                keyframe: rec.keyframe,
                slot: rec.slot,
                perm: Some(perm),
                qinfo,
                codes,
                ctxs,
                group_len: bl,
                clips,
            });
            dec_blocks.push(blocks);
        }
        let mut loose = Vec::with_capacity(lp.tensors.len());
        for tr in &lp.tensors {
            let t = ckpt.layers[li].get(&tr.name).ok_or_else(|| Error::MissingTensor(tr.name.clone()))?;
            let qp = init_with_rule(&t.data, tr.group_len, q.keyframe_rule, q.q_max_keyframe, q.learned_means)?;
            let (codes, clips) = quantize(&t.data, &qp)?;
            let deq = dequantize(&codes, &qp)?;
            let ctxs = build_context(lp.index, plan.tensor_slot(), &qp, None, true)?;
            loose.push((tr.name.clone(), Tensor::new(tr.shape.clone(), deq)?));
            coded.push(CodedRecord {
                id: RecordId { layer: lp.index as u32, unit: RecordUnit::Tensor(tr.ordinal) },
                keyframe: true,
                slot: plan.tensor_slot(),
                perm: None,
                qinfo: inline_qinfo(&qp),
                codes,
                ctxs,
                group_len: tr.group_len,
                clips,
            });
        }
        let sets: Vec<(&BlockTypeSpec, &BlockSet)> =
            lp.blocks.iter().zip(&canon_dec).map(|(b, bs)| (&types[b.slot], bs)).collect();
        recon_layers.push(assemble_layer(lp.index, &sets, &shapes[li], loose)?);
        decoded.push(dec_blocks);
    }
    let reconstruction = Checkpoint { arch_id: ckpt.arch_id, layers: recon_layers };

    // Entropy model ψ over every coded group.
    let psi: Option<EntropyModel> = if cfg.ablation.fixed_length_codes {
        None
    } else {
        let samples: Vec<GroupSample> = coded
            .iter()
            .flat_map(|c| c.ctxs.iter().zip(c.codes.chunks(c.group_len)).map(|(ctx, g)| GroupSample::from_codes(*ctx, g)))
            .collect();
        let mut ecfg = cfg.entropy.clone();
        ecfg.seed ^= cfg.seed;
        let (model, report) = fit_entropy_model(&samples, num_layers, plan.num_slots(), &ecfg)?;
        stats.entropy_nll_bits = report.nll_bits;
        Some(model)
    };

    // Permutation models η, one per block type.
    let digits: Vec<Option<Vec<u32>>> = coded.iter().map(|c| c.perm.as_ref().map(lehmer_encode)).collect();
    let mut prev_digits: Vec<Option<Vec<u32>>> = vec![None; coded.len()];
    {
        let mut last: HashMap<usize, (u32, usize)> = HashMap::new();
        for (k, c) in coded.iter().enumerate() {
            if c.perm.is_none() {
                continue;
            }
            if !c.keyframe {
                if let Some(&(layer, j)) = last.get(&c.slot) {
                    debug_assert_eq!(layer + 1, c.id.layer);
                    prev_digits[k] = digits[j].clone();
                }
            }
            last.insert(c.slot, (c.id.layer, k));
        }
    }
    let mut eta = Vec::with_capacity(types.len());
    for slot in 0..types.len() {
        let abs: Vec<&[u32]> = coded
            .iter()
            .zip(&digits)
            .filter(|(c, _)| c.slot == slot)
            .filter_map(|(_, d)| d.as_deref())
            .collect();
        let deltas: Vec<Vec<i64>> = coded
            .iter()
            .enumerate()
            .filter(|(k, c)| c.slot == slot && prev_digits[*k].is_some())
            .map(|(k, _)| delta_digits(digits[k].as_ref().unwrap(), prev_digits[k].as_ref().unwrap()))
            .collect::<Result<_>>()?;
        let delta_refs: Vec<&[i64]> = deltas.iter().map(Vec::as_slice).collect();
        eta.push(fit_perm_model(&abs, &delta_refs, cfg.perm_threshold));
    }

    let mut flags = 0;
    if psi.is_none() {
        flags |= FLAG_FIXED_CODES;
    }
    if cfg.ablation.fixed_length_perms {
        flags |= FLAG_FIXED_PERMS;
    }
    if cfg.ablation.no_predictor {
        flags |= FLAG_NO_PREDICTOR;
    }
    let shared_q: Vec<SharedQuant> = match shared_step(cfg) {
        Some(step) => types
            .iter()
            .enumerate()
            .filter(|(slot, _)| coded.iter().any(|c| c.slot == *slot && !c.keyframe))
            .map(|(_, t)| SharedQuant { type_id: t.type_id, step })
            .collect(),
        None => Vec::new(),
    };
    let header = Header {
        version: VERSION,
        num_layers: num_layers as u32,
        keyframe_interval: cfg.keyframe_interval,
        arch_id: ckpt.arch_id,
        flags,
        shapes,
        block_types: types.clone(),
        predictor_cfg: cfg.predictor,
        entropy: EntropySpec {
            model_id: ENTROPY_MODEL_LOGISTIC,
            embed_dim: cfg.entropy.embed_dim as u32,
            hidden: cfg.entropy.hidden as u32,
            q_max_residual: q.q_max_residual as u16,
            q_max_keyframe: q.q_max_keyframe as u16,
            prob_bits: PROB_BITS as u8,
        },
        theta,
        psi,
        eta,
        shared_q,
        record_count: plan.record_count() as u32,
    };
    let (mut out, _) = write_header_with_layout(&header);
    let mut entries = Vec::with_capacity(coded.len());
    for (k, c) in coded.iter().enumerate() {
        let offset = out.len();
        let (kind, id) = match c.id.unit {
            RecordUnit::Block(t) => (KIND_BLOCK, t),
            RecordUnit::Tensor(o) => (KIND_TENSOR, o),
        };
        put_u8(&mut out, kind);
        put_u32(&mut out, c.id.layer);
        put_u16(&mut out, id);
        put_u8(&mut out, if c.keyframe { MODE_KEYFRAME } else { MODE_PREDICTIVE });
        match &c.perm {
            None => put_u8(&mut out, PERM_NONE),
            Some(p) => {
                let (coding, payload) = if cfg.ablation.fixed_length_perms {
                    (PERM_FIXED, encode_perm_fixed(p))
                } else {
                    let d = digits[k].as_ref().unwrap();
                    let model: &PermModelParams = &header.eta[c.slot];
                    let abs = encode_perm_stream(d, None, model)?;
                    match (&prev_digits[k], cfg.ablation.no_delta_perm_coding) {
                        (Some(prev), false) => {
                            let delta = encode_perm_stream(d, Some(prev), model)?;
                            (PERM_RANGE, if delta.len() < abs.len() { delta } else { abs })
                        }
                        _ => (PERM_RANGE, abs),
                    }
                };
                put_u8(&mut out, coding);
                put_u32(&mut out, payload.len() as u32);
                out.extend_from_slice(&payload);
            }
        }
        write_qinfo(&mut out, &c.qinfo);
        let (coding, payload) = encode_codes(&c.codes, &c.ctxs, c.group_len, header.psi.as_ref())?;
        put_u8(&mut out, coding);
        put_u32(&mut out, c.codes.len() as u32);
        put_u32(&mut out, payload.len() as u32);
        out.extend_from_slice(&payload);
        let length = out.len() - offset;
        entries.push(TrailerEntry { offset: offset as u64, length: length as u32, clips: c.clips as u32 });

        let groups: Vec<(SymbolContext, &[i32])> = c.ctxs.iter().copied().zip(c.codes.chunks(c.group_len)).collect();
        let proxy = match &header.psi {
            Some(m) => codelength_proxy(m, &groups)?,
            None => 8.0 * payload.len() as f64,
        };
        stats.proxy_bits += proxy;
        stats.symbols += c.codes.len() as u64;
        stats.clip_count += c.clips as u64;
        stats.records.push(RecordStat {
            id: c.id,
            keyframe: c.keyframe,
            clips: c.clips as u32,
            symbols: c.codes.len() as u64,
            proxy_bits: proxy,
            bytes: length,
        });
    }
    write_trailer(&mut out, &entries);

    let (mut se, mut n) = (0.0f64, 0u64);
    for (a, b) in ckpt.layers.iter().zip(&reconstruction.layers) {
        for ((_, ta), (_, tb)) in a.tensors.iter().zip(&b.tensors) {
            for (&x, &y) in ta.data.iter().zip(&tb.data) {
                se += (x as f64 - y as f64).powi(2);
                n += 1;
            }
        }
    }
    stats.mse = se / n.max(1) as f64;
    if stats.clip_count > 0 {
        debug!("{} elements clipped to ±q_max", stats.clip_count);
    }
    Ok(EncodeOutput { bytes: out, reconstruction, stats })
}

/// One point of an operating-point sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub lambda: f64,
    pub bits_per_param: f64,
    pub mse: f64,
}

/// Encode at every λ and keep the point with the lowest distortion whose total
/// bits/param meets `target_bpp`; without a feasible point, the lowest-rate point.
pub fn encode_sweep(
    ckpt: &Checkpoint,
    cfg: &CodecConfig,
    lambdas: &[f64],
    target_bpp: Option<f64>,
    acts: Option<&ActivationSet>,
) -> Result<(EncodeOutput, Vec<SweepPoint>)> {
    if lambdas.is_empty() {
        return Err(Error::InvalidConfig("λ sweep is empty".into()));
    }
    let params = crate::container::param_count(ckpt) as f64;
    let mut best: Option<(EncodeOutput, SweepPoint)> = None;
    let mut points = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let mut c = cfg.clone();
        c.lambda = lambda;
        let out = encode_checkpoint(ckpt, &c, acts)?;
        let pt = SweepPoint { lambda, bits_per_param: 8.0 * out.bytes.len() as f64 / params, mse: out.stats.mse };
        points.push(pt.clone());
        let feasible = |p: &SweepPoint| target_bpp.is_none_or(|t| p.bits_per_param <= t);
        let better = match &best {
            None => true,
            Some((_, b)) => match (feasible(&pt), feasible(b)) {
                (true, false) => true,
                (false, true) => false,
                (true, true) => pt.mse < b.mse,
                (false, false) => pt.bits_per_param < b.bits_per_param,
            },
        };
        if better {
            best = Some((out, pt));
        }
    }
    Ok((best.unwrap().0, points))
}
