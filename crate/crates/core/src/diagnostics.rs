//! Predictability metrics, executable symmetry checks and deployment cost arithmetic.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::blocks::{BlockSet, Permutation};
use crate::codec::{alignment_view, ActivationSet, CodecConfig};
use crate::container::Checkpoint;
use crate::error::{Error, Result};
use crate::predictor::Predictor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(MeanStd { mean, std: var.sqrt() })
    }
}

/// Cosine of two flattened blocks; 0 when either is all zeros.
pub fn block_cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
    }
}

fn check_matched(prev: &BlockSet, cur: &BlockSet) -> Result<()> {
    if prev.type_id != cur.type_id || prev.len() != cur.len() {
        return Err(Error::ShapeMismatch(format!(
            "layer {} type {} ({} blocks) vs layer {} type {} ({} blocks)",
            prev.layer,
            prev.type_id,
            prev.len(),
            cur.layer,
            cur.type_id,
            cur.len()
        )));
    }
    for (a, b) in prev.blocks.iter().zip(&cur.blocks) {
        if a.len() != b.len() {
            return Err(Error::ShapeMismatch(format!("block length {} vs {}", a.len(), b.len())));
        }
    }
    Ok(())
}

/// Cosine between block i of `prev` and block i of `cur`, for every i.
pub fn pair_cosines(prev: &BlockSet, cur: &BlockSet) -> Result<Vec<f64>> {
    check_matched(prev, cur)?;
    Ok(prev.blocks.iter().zip(&cur.blocks).map(|(a, b)| block_cosine(a, b)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CosineRow {
    /// Layer of the later block set in the pair.
    pub layer: usize,
    pub type_id: u16,
    pub before: MeanStd,
    pub after: MeanStd,
}

/// Adjacent-pair cosine statistics of one block type's layer sequence, before and
/// after alignment. `before[k]` and `after[k]` are the same layer.
pub fn cosine_profile(before: &[BlockSet], after: &[BlockSet]) -> Result<Vec<CosineRow>> {
    if before.len() != after.len() {
        return Err(Error::ShapeMismatch(format!("{} canonical vs {} aligned layers", before.len(), after.len())));
    }
    let mut rows = Vec::with_capacity(before.len().saturating_sub(1));
    for k in 1..before.len() {
        check_matched(&before[k], &after[k])?;
        let b = pair_cosines(&before[k - 1], &before[k])?;
        let a = pair_cosines(&after[k - 1], &after[k])?;
        let (Some(cb), Some(ca)) = (MeanStd::of(&b), MeanStd::of(&a)) else {
            continue;
        };
        rows.push(CosineRow { layer: after[k].layer, type_id: after[k].type_id, before: cb, after: ca });
    }
    Ok(rows)
}

fn sq_dist<T: AsRef<[f32]>>(targets: &[T], preds: &[T]) -> Result<f64> {
    if targets.len() != preds.len() {
        return Err(Error::ShapeMismatch(format!("{} targets vs {} predictions", targets.len(), preds.len())));
    }
    let mut s = 0.0;
    for (t, p) in targets.iter().zip(preds) {
        let (t, p) = (t.as_ref(), p.as_ref());
        if t.len() != p.len() {
            return Err(Error::ShapeMismatch(format!("block length {} vs {}", t.len(), p.len())));
        }
        s += t.iter().zip(p).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum::<f64>();
    }
    Ok(s)
}

/// Total squared deviation of the blocks from their mean block.
pub fn total_variation<T: AsRef<[f32]>>(targets: &[T]) -> Result<f64> {
    let Some(first) = targets.first() else {
        return Ok(0.0);
    };
    let d = first.as_ref().len();
    let mut mean = vec![0.0f64; d];
    for t in targets {
        let t = t.as_ref();
        if t.len() != d {
            return Err(Error::ShapeMismatch(format!("block length {} vs {}", t.len(), d)));
        }
        for (m, &v) in mean.iter_mut().zip(t) {
            *m += v as f64;
        }
    }
    let n = targets.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(targets.iter().map(|t| t.as_ref().iter().zip(&mean).map(|(&v, m)| (v as f64 - m).powi(2)).sum::<f64>()).sum())
}

/// Total squared norm of the blocks.
pub fn energy<T: AsRef<[f32]>>(targets: &[T]) -> f64 {
    targets.iter().map(|t| t.as_ref().iter().map(|&v| (v as f64).powi(2)).sum::<f64>()).sum()
}

/// 1 − Σ‖t − p‖² / Σ‖t − t̄‖², with t̄ the mean target block.
pub fn predictor_r2<T: AsRef<[f32]>>(targets: &[T], preds: &[T]) -> Result<f64> {
    let sse = sq_dist(targets, preds)?;
    let sst = total_variation(targets)?;
    if sst == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok(1.0 - sse / sst)
}

/// Σ‖t − p‖² / Σ‖t‖².
pub fn nre<T: AsRef<[f32]>>(targets: &[T], preds: &[T]) -> Result<f64> {
    let sse = sq_dist(targets, preds)?;
    let e = energy(targets);
    if e == 0.0 {
        return Err(Error::ZeroEnergy);
    }
    Ok(sse / e)
}

/// Counts of |v| per bucket `[edges[k], edges[k+1])`; the last bucket is open above.
pub fn magnitude_histogram(values: impl IntoIterator<Item = f64>, edges: &[f64]) -> Vec<u64> {
    let mut counts = vec![0u64; edges.len()];
    for v in values {
        let a = v.abs();
        let k = edges.partition_point(|&e| e <= a);
        if k > 0 {
            counts[k - 1] += 1;
        }
    }
    counts
}

/// 0 followed by powers of two from 2^lo to 2^hi.
pub fn octave_edges(lo: i32, hi: i32) -> Vec<f64> {
    std::iter::once(0.0).chain((lo..=hi).map(|k| 2f64.powi(k))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualHistogram {
    pub edges: Vec<f64>,
    pub before: Vec<u64>,
    pub after: Vec<u64>,
}

impl ResidualHistogram {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("lower,upper,before,after\n");
        for (k, lo) in self.edges.iter().enumerate() {
            let hi = self.edges.get(k + 1).map_or("inf".to_string(), |v| format!("{v:e}"));
            s.push_str(&format!("{lo:e},{hi},{},{}\n", self.before[k], self.after[k]));
        }
        s
    }
}

/// Published before/after values for a real model, carried as reference columns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReferenceRow {
    pub model: &'static str,
    pub cos_before: f64,
    pub cos_after: f64,
    pub r2_before: f64,
    pub r2_after: f64,
    pub nre_before: f64,
    pub nre_after: f64,
}

pub const REFERENCE_TABLE: [ReferenceRow; 4] = [
    ReferenceRow { model: "Pythia-1.4B", cos_before: 0.28, cos_after: 0.67, r2_before: 0.22, r2_after: 0.61, nre_before: 0.74, nre_after: 0.39 },
    ReferenceRow { model: "OPT-1.3B", cos_before: 0.24, cos_after: 0.63, r2_before: 0.18, r2_after: 0.57, nre_before: 0.77, nre_after: 0.42 },
    ReferenceRow { model: "ViT-B/16", cos_before: 0.21, cos_after: 0.54, r2_before: 0.14, r2_after: 0.46, nre_before: 0.81, nre_after: 0.51 },
    ReferenceRow { model: "Swin-T", cos_before: 0.19, cos_after: 0.49, r2_before: 0.12, r2_after: 0.41, nre_before: 0.84, nre_after: 0.56 },
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictabilityRow {
    pub layer: usize,
    pub type_id: u16,
    pub cos_before: MeanStd,
    pub cos_after: MeanStd,
    /// `None` when the targets have zero variance.
    pub r2_before: Option<f64>,
    pub r2_after: Option<f64>,
    /// `None` when the targets have zero energy.
    pub nre_before: Option<f64>,
    pub nre_after: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictabilityAggregate {
    pub pairs: usize,
    pub cos_before: Option<MeanStd>,
    pub cos_after: Option<MeanStd>,
    pub r2_before: Option<MeanStd>,
    pub r2_after: Option<MeanStd>,
    pub nre_before: Option<MeanStd>,
    pub nre_after: Option<MeanStd>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictabilityReport {
    pub rows: Vec<PredictabilityRow>,
    pub aggregate: PredictabilityAggregate,
    pub reference: ReferenceRow,
    pub histogram: ResidualHistogram,
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x:.6}"))
}

impl PredictabilityReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per (layer, type) pair, then an `all` row with pooled means; the
    /// reference model's values fill the trailing columns of every row.
    pub fn to_csv(&self) -> String {
        let r = &self.reference;
        let refs = format!(
            "{},{},{},{},{},{},{}",
            r.model, r.cos_before, r.cos_after, r.r2_before, r.r2_after, r.nre_before, r.nre_after
        );
        let mut s = String::from(
            "layer,type_id,cos_before_mean,cos_before_std,cos_after_mean,cos_after_std,r2_before,r2_after,nre_before,nre_after,\
             ref_model,ref_cos_before,ref_cos_after,ref_r2_before,ref_r2_after,ref_nre_before,ref_nre_after\n",
        );
        for row in &self.rows {
            s.push_str(&format!(
                "{},{},{:.6},{:.6},{:.6},{:.6},{},{},{},{},{refs}\n",
                row.layer,
                row.type_id,
                row.cos_before.mean,
                row.cos_before.std,
                row.cos_after.mean,
                row.cos_after.std,
                opt(row.r2_before),
                opt(row.r2_after),
                opt(row.nre_before),
                opt(row.nre_after),
            ));
        }
        let a = &self.aggregate;
        let ms = |m: Option<MeanStd>| m.map_or(",".to_string(), |m| format!("{:.6},{:.6}", m.mean, m.std));
        let mean = |m: Option<MeanStd>| opt(m.map(|m| m.mean));
        s.push_str(&format!(
            "all,,{},{},{},{},{},{},{refs}\n",
            ms(a.cos_before),
            ms(a.cos_after),
            mean(a.r2_before),
            mean(a.r2_after),
            mean(a.nre_before),
            mean(a.nre_after),
        ));
        s
    }
}

fn predictions(theta: Option<&Predictor>, prev: &BlockSet, layer: usize, slot: usize) -> Result<Vec<Vec<f32>>> {
    match theta {
        Some(t) => t.predict_blocks(&prev.blocks, layer, slot),
        None => Ok(prev.blocks.clone()),
    }
}

fn residuals<'a>(targets: &'a [Vec<f32>], preds: &'a [Vec<f32>]) -> impl Iterator<Item = f64> + 'a {
    targets.iter().zip(preds).flat_map(|(t, p)| t.iter().zip(p).map(|(&a, &b)| a as f64 - b as f64))
}

/// Cosine, R² and NRE for every predictive record, before (canonical order, predictor
/// trained on the canonical sequence) and after (encoder alignment, predictor trained
/// on the aligned sequence). Predictions use the uncompressed previous layer. Keyframe
/// layers break the chain; use `keyframe_interval ≥ L` to cover every adjacent pair.
/// With `no_predictor` the prediction is the previous block.
pub fn predictability_report(
    ckpt: &Checkpoint,
    cfg: &CodecConfig,
    acts: Option<&ActivationSet>,
    histogram_edges: &[f64],
) -> Result<PredictabilityReport> {
    let view = alignment_view(ckpt, cfg, acts)?;
    let mut rows = Vec::new();
    let mut hist_before = vec![0u64; histogram_edges.len()];
    let mut hist_after = vec![0u64; histogram_edges.len()];
    for (li, lp) in view.plan.layers.iter().enumerate() {
        for (bi, rec) in lp.blocks.iter().enumerate() {
            if rec.keyframe {
                continue;
            }
            let (pbi, _) = view.plan.layers[li - 1].block_by_slot(rec.slot).expect("predictive record has a predecessor");
            let (cb, cp) = (&view.canonical[li][bi], &view.canonical[li - 1][pbi]);
            let (ab, ap) = (&view.aligned[li][bi], &view.aligned[li - 1][pbi]);
            let cos_b = pair_cosines(cp, cb)?;
            let cos_a = pair_cosines(ap, ab)?;
            let pred_b = predictions(view.identity_predictor.as_ref(), cp, lp.index, rec.slot)?;
            let pred_a = predictions(view.predictor.as_ref(), ap, lp.index, rec.slot)?;
            for (h, c) in hist_before.iter_mut().zip(magnitude_histogram(residuals(&cb.blocks, &pred_b), histogram_edges)) {
                *h += c;
            }
            for (h, c) in hist_after.iter_mut().zip(magnitude_histogram(residuals(&ab.blocks, &pred_a), histogram_edges)) {
                *h += c;
            }
            let (Some(cos_before), Some(cos_after)) = (MeanStd::of(&cos_b), MeanStd::of(&cos_a)) else {
                continue;
            };
            rows.push(PredictabilityRow {
                layer: lp.index,
                type_id: rec.type_id,
                cos_before,
                cos_after,
                r2_before: predictor_r2(&cb.blocks, &pred_b).ok(),
                r2_after: predictor_r2(&ab.blocks, &pred_a).ok(),
                nre_before: nre(&cb.blocks, &pred_b).ok(),
                nre_after: nre(&ab.blocks, &pred_a).ok(),
            });
        }
    }
    let pool = |f: &dyn Fn(&PredictabilityRow) -> Option<f64>| MeanStd::of(&rows.iter().filter_map(f).collect::<Vec<_>>());
    let aggregate = PredictabilityAggregate {
        pairs: rows.len(),
        cos_before: pool(&|r| Some(r.cos_before.mean)),
        cos_after: pool(&|r| Some(r.cos_after.mean)),
        r2_before: pool(&|r| r.r2_before),
        r2_after: pool(&|r| r.r2_after),
        nre_before: pool(&|r| r.nre_before),
        nre_after: pool(&|r| r.nre_after),
    };
    Ok(PredictabilityReport {
        rows,
        aggregate,
        reference: REFERENCE_TABLE[0],
        histogram: ResidualHistogram { edges: histogram_edges.to_vec(), before: hist_before, after: hist_after },
    })
}

fn dim(what: &str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch(format!("{what}: expected {expected}, got {got}")));
    }
    Ok(())
}

fn gaussian(n: usize, scale: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    /// tanh approximation.
    Gelu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Gelu => {
                0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x * x * x)).tanh())
            }
        }
    }
}

/// Two-layer perceptron y = W2·σ(W1·x + b1) + b2, row-major weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub d_in: usize,
    pub hidden: usize,
    pub d_out: usize,
    /// hidden × d_in
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// d_out × hidden
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub activation: Activation,
}

impl Mlp {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        d_in: usize,
        hidden: usize,
        d_out: usize,
        w1: Vec<f64>,
        b1: Vec<f64>,
        w2: Vec<f64>,
        b2: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        dim("W1", hidden * d_in, w1.len())?;
        dim("b1", hidden, b1.len())?;
        dim("W2", d_out * hidden, w2.len())?;
        dim("b2", d_out, b2.len())?;
        Ok(Mlp { d_in, hidden, d_out, w1, b1, w2, b2, activation })
    }

    pub fn random(d_in: usize, hidden: usize, d_out: usize, activation: Activation, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w1 = gaussian(hidden * d_in, 1.0 / (d_in as f64).sqrt(), &mut rng);
        let b1 = gaussian(hidden, 0.1, &mut rng);
        let w2 = gaussian(d_out * hidden, 1.0 / (hidden as f64).sqrt(), &mut rng);
        let b2 = gaussian(d_out, 0.1, &mut rng);
        Mlp { d_in, hidden, d_out, w1, b1, w2, b2, activation }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        dim("probe", self.d_in, x.len())?;
        let h: Vec<f64> = (0..self.hidden)
            .map(|i| {
                let row = &self.w1[i * self.d_in..][..self.d_in];
                self.activation.apply(row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.b1[i])
            })
            .collect();
        Ok((0..self.d_out)
            .map(|o| self.w2[o * self.hidden..][..self.hidden].iter().zip(&h).map(|(w, v)| w * v).sum::<f64>() + self.b2[o])
            .collect())
    }

    /// Hidden unit i of the result is unit π(i) of `self`; `compensate` permutes the
    /// columns of W2 to match.
    pub fn permute_hidden(&self, perm: &Permutation, compensate: bool) -> Result<Self> {
        dim("permutation", self.hidden, perm.len())?;
        let mut out = self.clone();
        for i in 0..self.hidden {
            let src = perm.get(i);
            out.w1[i * self.d_in..][..self.d_in].copy_from_slice(&self.w1[src * self.d_in..][..self.d_in]);
            out.b1[i] = self.b1[src];
            if compensate {
                for o in 0..self.d_out {
                    out.w2[o * self.hidden + i] = self.w2[o * self.hidden + src];
                }
            }
        }
        Ok(out)
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn mlp_gap(mlp: &Mlp, perm: &Permutation, probes: &[Vec<f64>], compensate: bool) -> Result<f64> {
    let p = mlp.permute_hidden(perm, compensate)?;
    let mut worst = 0.0f64;
    for x in probes {
        worst = worst.max(max_abs_diff(&mlp.forward(x)?, &p.forward(x)?));
    }
    Ok(worst)
}

/// Max |f(x) − f_π(x)| over the probes, where f_π permutes the hidden units and
/// compensates in W2.
pub fn verify_mlp_invariance(mlp: &Mlp, perm: &Permutation, probes: &[Vec<f64>]) -> Result<f64> {
    mlp_gap(mlp, perm, probes, true)
}

/// As [`verify_mlp_invariance`] with the W2 compensation omitted.
pub fn mlp_negative_control(mlp: &Mlp, perm: &Permutation, probes: &[Vec<f64>]) -> Result<f64> {
    mlp_gap(mlp, perm, probes, false)
}

/// Multi-head self-attention without mask or biases. Projection matrices are
/// row-major with output features as rows: Q/K/V are (H·d_h) × d_model, O is
/// d_model × (H·d_h).
#[derive(Debug, Clone, PartialEq)]
pub struct Mha {
    pub d_model: usize,
    pub heads: usize,
    pub d_head: usize,
    pub wq: Vec<f64>,
    pub wk: Vec<f64>,
    pub wv: Vec<f64>,
    pub wo: Vec<f64>,
}

impl Mha {
    pub fn new(d_model: usize, heads: usize, d_head: usize, wq: Vec<f64>, wk: Vec<f64>, wv: Vec<f64>, wo: Vec<f64>) -> Result<Self> {
        dim("d_model", heads * d_head, d_model)?;
        let n = d_model * heads * d_head;
        dim("W_Q", n, wq.len())?;
        dim("W_K", n, wk.len())?;
        dim("W_V", n, wv.len())?;
        dim("W_O", n, wo.len())?;
        Ok(Mha { d_model, heads, d_head, wq, wk, wv, wo })
    }

    pub fn random(heads: usize, d_head: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = heads * d_head;
        let s = 1.0 / (d as f64).sqrt();
        let wq = gaussian(d * d, s, &mut rng);
        let wk = gaussian(d * d, s, &mut rng);
        let wv = gaussian(d * d, s, &mut rng);
        let wo = gaussian(d * d, s, &mut rng);
        Mha { d_model: d, heads, d_head, wq, wk, wv, wo }
    }

    fn project(w: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
        (0..rows).map(|r| w[r * cols..][..cols].iter().zip(x).map(|(a, b)| a * b).sum()).collect()
    }

    /// Output for a sequence of d_model-sized tokens.
    pub fn forward(&self, seq: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let inner = self.heads * self.d_head;
        for x in seq {
            dim("token", self.d_model, x.len())?;
        }
        let q: Vec<Vec<f64>> = seq.iter().map(|x| Self::project(&self.wq, inner, self.d_model, x)).collect();
        let k: Vec<Vec<f64>> = seq.iter().map(|x| Self::project(&self.wk, inner, self.d_model, x)).collect();
        let v: Vec<Vec<f64>> = seq.iter().map(|x| Self::project(&self.wv, inner, self.d_model, x)).collect();
        let scale = 1.0 / (self.d_head as f64).sqrt();
        let mut out = Vec::with_capacity(seq.len());
        for qi in &q {
            let mut concat = vec![0.0; inner];
            for h in 0..self.heads {
                let r = h * self.d_head..(h + 1) * self.d_head;
                let logits: Vec<f64> = k
                    .iter()
                    .map(|kj| qi[r.clone()].iter().zip(&kj[r.clone()]).map(|(a, b)| a * b).sum::<f64>() * scale)
                    .collect();
                let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let w: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
                let z: f64 = w.iter().sum();
                for (wj, vj) in w.iter().zip(&v) {
                    for (c, &x) in concat[r.clone()].iter_mut().zip(&vj[r.clone()]) {
                        *c += wj / z * x;
                    }
                }
            }
            out.push(Self::project(&self.wo, self.d_model, inner, &concat));
        }
        Ok(out)
    }

    /// Head i of the result is head π(i) of `self`: rows of Q/K/V and columns of O
    /// move by π ⊗ I_dh. With `q_only` just W_Q is permuted.
    pub fn permute_heads(&self, perm: &Permutation, q_only: bool) -> Result<Self> {
        dim("head permutation", self.heads, perm.len())?;
        let mut out = self.clone();
        let (dh, dm, inner) = (self.d_head, self.d_model, self.heads * self.d_head);
        for h in 0..self.heads {
            let src = perm.get(h);
            for j in 0..dh {
                let (to, from) = (h * dh + j, src * dh + j);
                out.wq[to * dm..][..dm].copy_from_slice(&self.wq[from * dm..][..dm]);
                if q_only {
                    continue;
                }
                out.wk[to * dm..][..dm].copy_from_slice(&self.wk[from * dm..][..dm]);
                out.wv[to * dm..][..dm].copy_from_slice(&self.wv[from * dm..][..dm]);
                for o in 0..dm {
                    out.wo[o * inner + to] = self.wo[o * inner + from];
                }
            }
        }
        Ok(out)
    }
}

fn mha_gap(mha: &Mha, perm: &Permutation, probes: &[Vec<Vec<f64>>], q_only: bool) -> Result<f64> {
    let p = mha.permute_heads(perm, q_only)?;
    let mut worst = 0.0f64;
    for seq in probes {
        for (a, b) in mha.forward(seq)?.iter().zip(&p.forward(seq)?) {
            worst = worst.max(max_abs_diff(a, b));
        }
    }
    Ok(worst)
}

/// Max |f(X) − f_π(X)| over probe sequences with heads permuted consistently in Q, K, V and O.
pub fn verify_mha_invariance(mha: &Mha, perm: &Permutation, probes: &[Vec<Vec<f64>>]) -> Result<f64> {
    mha_gap(mha, perm, probes, false)
}

/// As [`verify_mha_invariance`] with only W_Q permuted.
pub fn mha_negative_control(mha: &Mha, perm: &Permutation, probes: &[Vec<Vec<f64>>]) -> Result<f64> {
    mha_gap(mha, perm, probes, true)
}

/// Sizes in GB, bandwidth in GB/s, times in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeploymentScenario {
    pub baseline_gb: f64,
    pub compressed_gb: f64,
    pub bandwidth_gb_s: f64,
    pub decode_s: f64,
    /// Time to materialize the baseline checkpoint after transfer.
    pub materialize_s: f64,
    /// One-off extra encode cost.
    pub extra_encode_s: f64,
}

impl DeploymentScenario {
    /// Pythia-1.4B at 16 bits; materialization is taken equal to the decode time.
    pub fn pythia_1_4b() -> Self {
        DeploymentScenario {
            baseline_gb: 2.80,
            compressed_gb: 0.74,
            bandwidth_gb_s: 0.10,
            decode_s: 2.5,
            materialize_s: 2.5,
            extra_encode_s: 2.3 * 3600.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [self.baseline_gb, self.compressed_gb, self.bandwidth_gb_s, self.decode_s, self.materialize_s, self.extra_encode_s];
        if fields.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidConfig("scenario values must be finite and nonnegative".into()));
        }
        if self.bandwidth_gb_s <= 0.0 {
            return Err(Error::InvalidConfig("bandwidth must be positive".into()));
        }
        Ok(())
    }

    /// Per-deployment load time saved: transfer saving − decode + baseline materialize.
    pub fn load_saving_s(&self) -> f64 {
        (self.baseline_gb - self.compressed_gb) / self.bandwidth_gb_s - self.decode_s + self.materialize_s
    }
}

/// Deployments needed before the extra encode cost is recovered.
pub fn break_even(s: &DeploymentScenario) -> Result<u64> {
    s.validate()?;
    let dt = s.load_saving_s();
    if dt <= 0.0 {
        return Err(Error::NoBreakEven(dt));
    }
    Ok((s.extra_encode_s / dt).ceil() as u64)
}

/// N·R/8.
pub fn bitstream_size_bytes(n_params: f64, bits_per_param: f64) -> f64 {
    n_params * bits_per_param / 8.0
}
