//! Conditional entropy model ψ: a context MLP emitting discretized-logistic
//! parameters (α, β), one pair per quantizer group.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::logistic::{logistic_cdf, pmf_table, raw_mass, BETA_FLOOR};
use super::rangecoder::Cdf;
use crate::detmath;
use crate::error::{Error, Result};
use crate::nn::{clip_grad_norm, linear, linear_backward, lr_at, split_two, AdamW, ParamStore};
use crate::quant::QuantizerParams;

/// Conditioning for one quantizer group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymbolContext {
    /// 1-based layer index.
    pub layer: usize,
    /// Row of the type embedding table (block types in spec order, then uncovered tensors).
    pub type_slot: usize,
    pub q_max: u32,
    pub step: f32,
    pub mu: f64,
    pub sigma: f64,
    pub keyframe: bool,
}

fn group_stats(values: &[f32]) -> (f64, f64) {
    let n = values.len() as f64;
    let mu = values.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = values.iter().map(|&v| (v as f64 - mu).powi(2)).sum::<f64>() / n;
    (mu, var.sqrt())
}

/// Per-group contexts for one record. Predictive records carry the (μ, σ) of the
/// predicted values at group granularity; keyframe records zero-fill them.
pub fn build_context(
    layer: usize,
    type_slot: usize,
    q: &QuantizerParams,
    predicted: Option<&[f32]>,
    keyframe: bool,
) -> Result<Vec<SymbolContext>> {
    let base = |g: usize, mu: f64, sigma: f64| SymbolContext {
        layer,
        type_slot,
        q_max: q.q_max,
        step: q.step[g],
        mu,
        sigma,
        keyframe,
    };
    if keyframe {
        return Ok((0..q.num_groups()).map(|g| base(g, 0.0, 0.0)).collect());
    }
    let pred = predicted.ok_or(Error::MissingPrediction)?;
    if pred.len() != q.num_elements() {
        return Err(Error::LengthMismatch { expected: q.num_elements(), got: pred.len() });
    }
    Ok(pred
        .chunks(q.group_len)
        .enumerate()
        .map(|(g, vals)| {
            let (mu, sigma) = group_stats(vals);
            base(g, mu, sigma)
        })
        .collect())
}

/// No-prediction baseline: statistics of the values being coded themselves.
pub fn build_baseline_context(
    layer: usize,
    type_slot: usize,
    q: &QuantizerParams,
    values: &[f32],
) -> Result<Vec<SymbolContext>> {
    let mut ctx = build_context(layer, type_slot, q, Some(values), false)?;
    for c in &mut ctx {
        c.keyframe = false;
    }
    Ok(ctx)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EntropyFitConfig {
    pub steps: usize,
    pub lr: f64,
    pub hidden: usize,
    pub embed_dim: usize,
    /// Groups per step; all groups when fewer are available.
    pub batch_groups: usize,
    pub seed: u64,
}

impl Default for EntropyFitConfig {
    fn default() -> Self {
        EntropyFitConfig { steps: 300, lr: 5e-3, hidden: 128, embed_dim: 8, batch_groups: 4096, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntropyModel {
    pub num_layers: usize,
    pub num_slots: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    pub params: ParamStore,
    ids: ModelIds,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct ModelIds {
    e_layer: usize,
    e_type: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

const SCALAR_FEATURES: usize = 4;

fn softsign(x: f64) -> f64 {
    x / (1.0 + x.abs())
}

struct Forward {
    x: Vec<f64>,
    a: Vec<f64>,
    h: Vec<f64>,
    out: [f64; 2],
}

impl EntropyModel {
    /// Zero-initialized model of the given geometry (the shape the decoder allocates).
    pub fn new(num_layers: usize, num_slots: usize, embed_dim: usize, hidden: usize) -> Self {
        let mut p = ParamStore::new();
        let in_dim = 2 * embed_dim + SCALAR_FEATURES;
        let ids = ModelIds {
            e_layer: p.add("psi.e_layer", vec![num_layers, embed_dim], false),
            e_type: p.add("psi.e_type", vec![num_slots, embed_dim], false),
            w1: p.add("psi.w1", vec![hidden, in_dim], true),
            b1: p.add("psi.b1", vec![hidden], false),
            w2: p.add("psi.w2", vec![2, hidden], true),
            b2: p.add("psi.b2", vec![2], false),
        };
        EntropyModel { num_layers, num_slots, embed_dim, hidden, params: p, ids }
    }

    fn in_dim(&self) -> usize {
        2 * self.embed_dim + SCALAR_FEATURES
    }

    fn features(&self, c: &SymbolContext) -> Result<Vec<f64>> {
        if c.layer == 0 || c.layer > self.num_layers {
            return Err(Error::LayerIndexOutOfRange(c.layer));
        }
        if c.type_slot >= self.num_slots {
            return Err(Error::UnknownType(c.type_slot as u16));
        }
        debug_assert!(!c.keyframe || (c.mu == 0.0 && c.sigma == 0.0));
        let e = self.embed_dim;
        let mut x = Vec::with_capacity(self.in_dim());
        x.extend_from_slice(&self.params.seg(self.ids.e_layer)[(c.layer - 1) * e..c.layer * e]);
        x.extend_from_slice(&self.params.seg(self.ids.e_type)[c.type_slot * e..(c.type_slot + 1) * e]);
        let s = (c.step as f64).max(1e-30);
        x.push(detmath::ln(s) / 8.0);
        x.push(softsign(c.mu / s / 16.0));
        x.push(softsign(c.sigma / s / 16.0));
        x.push(if c.keyframe { 1.0 } else { 0.0 });
        Ok(x)
    }

    fn forward(&self, c: &SymbolContext) -> Result<Forward> {
        let x = self.features(c)?;
        let mut a = vec![0.0; self.hidden];
        linear(self.params.seg(self.ids.w1), Some(self.params.seg(self.ids.b1)), &x, &mut a);
        let h: Vec<f64> = a.iter().map(|&v| detmath::gelu(v)).collect();
        let mut out = [0.0; 2];
        linear(self.params.seg(self.ids.w2), Some(self.params.seg(self.ids.b2)), &h, &mut out);
        Ok(Forward { x, a, h, out })
    }

    /// Location and scale of the discretized logistic for a group.
    pub fn logistic_params(&self, c: &SymbolContext) -> Result<(f64, f64)> {
        let f = self.forward(c)?;
        Ok((f.out[0], BETA_FLOOR + detmath::softplus(f.out[1])))
    }

    pub fn cdf_for(&self, c: &SymbolContext) -> Result<Cdf> {
        let (a, b) = self.logistic_params(c)?;
        logistic_cdf(a, b, c.q_max)
    }

    pub fn pmf_for(&self, c: &SymbolContext) -> Result<Vec<f64>> {
        let (a, b) = self.logistic_params(c)?;
        Ok(pmf_table(a, b, c.q_max))
    }

    /// Accumulate gradients of `Σ count·(−ln p)` for one group into `grad`; returns the loss.
    fn group_loss_grad(&self, c: &SymbolContext, hist: &[(i32, u32)], grad: &mut [f64]) -> Result<f64> {
        let f = self.forward(c)?;
        let alpha = f.out[0];
        let sp = detmath::softplus(f.out[1]);
        let beta = BETA_FLOOR + sp;
        let q = c.q_max as i64;
        let mut loss = 0.0;
        let (mut d_alpha, mut d_beta) = (0.0, 0.0);
        for &(code, n) in hist {
            let code = code as i64;
            let n = n as f64;
            let p = raw_mass(code, alpha, beta, c.q_max).max(1e-300);
            loss -= n * detmath::ln(p);
            // ∂F(x)/∂α = −σ'(z)/β, ∂F(x)/∂β = −σ'(z)·z/β with z = (x−α)/β
            let edge = |x: f64| {
                let z = (x - alpha) / beta;
                let d = detmath::sigmoid(z) * detmath::sigmoid(-z);
                (-d / beta, -d * z / beta)
            };
            let (mut ga, mut gb) = (0.0, 0.0);
            if code < q {
                let (a, b) = edge(code as f64 + 0.5);
                ga += a;
                gb += b;
            }
            if code > -q {
                let (a, b) = edge(code as f64 - 0.5);
                ga -= a;
                gb -= b;
            }
            d_alpha -= n * ga / p;
            d_beta -= n * gb / p;
        }
        let dout = [d_alpha, d_beta * detmath::sigmoid(f.out[1])];
        let ids = self.ids;
        let mut dh = vec![0.0; self.hidden];
        {
            let (gw2, gb2) = split_two(grad, self.params.range(ids.w2), self.params.range(ids.b2));
            linear_backward(self.params.seg(ids.w2), &f.h, &dout, gw2, Some(gb2), Some(&mut dh));
        }
        let da: Vec<f64> = dh.iter().zip(&f.a).map(|(d, &a)| d * detmath::gelu_grad(a)).collect();
        let mut dx = vec![0.0; f.x.len()];
        {
            let (gw1, gb1) = split_two(grad, self.params.range(ids.w1), self.params.range(ids.b1));
            linear_backward(self.params.seg(ids.w1), &f.x, &da, gw1, Some(gb1), Some(&mut dx));
        }
        let e = self.embed_dim;
        let lr = self.params.range(ids.e_layer).start + (c.layer - 1) * e;
        let tr = self.params.range(ids.e_type).start + c.type_slot * e;
        for k in 0..e {
            grad[lr + k] += dx[k];
            grad[tr + k] += dx[e + k];
        }
        Ok(loss)
    }

    pub fn write(&self, out: &mut Vec<u8>) {
        self.params.write_table(out);
    }

    pub fn read(&mut self, bytes: &[u8]) -> Result<usize> {
        self.params.read_table(bytes)
    }
}

/// Codes of one quantizer group, compressed to a histogram.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSample {
    pub ctx: SymbolContext,
    pub hist: Vec<(i32, u32)>,
}

impl GroupSample {
    pub fn from_codes(ctx: SymbolContext, codes: &[i32]) -> Self {
        let mut sorted = codes.to_vec();
        sorted.sort_unstable();
        let mut hist: Vec<(i32, u32)> = Vec::new();
        for c in sorted {
            match hist.last_mut() {
                Some((v, n)) if *v == c => *n += 1,
                _ => hist.push((c, 1)),
            }
        }
        GroupSample { ctx, hist }
    }

    pub fn count(&self) -> u64 {
        self.hist.iter().map(|&(_, n)| n as u64).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    /// Training NLL in bits per symbol, one entry per step (entry 0 is the initialization).
    pub nll_bits: Vec<f64>,
}

fn inverse_softplus(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        (y.exp() - 1.0).ln()
    }
}

fn batch_loss_grad(model: &EntropyModel, batch: &[&GroupSample]) -> Result<(f64, Vec<f64>, u64)> {
    let n = model.params.len();
    let parts: Vec<Result<(f64, Vec<f64>, u64)>> = batch
        .par_chunks(64)
        .map(|chunk| {
            let mut g = vec![0.0; n];
            let mut loss = 0.0;
            let mut count = 0;
            for s in chunk {
                loss += model.group_loss_grad(&s.ctx, &s.hist, &mut g)?;
                count += s.count();
            }
            Ok((loss, g, count))
        })
        .collect();
    let mut loss = 0.0;
    let mut grad = vec![0.0; n];
    let mut count = 0;
    for p in parts {
        let (l, g, c) = p?;
        loss += l;
        count += c;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    Ok((loss, grad, count))
}

/// Fit ψ by minimizing the code NLL with Adam. The returned parameters are rounded to
/// f32 so the encoder codes with exactly what the decoder will read.
pub fn fit_entropy_model(
    samples: &[GroupSample],
    num_layers: usize,
    num_slots: usize,
    cfg: &EntropyFitConfig,
) -> Result<(EntropyModel, FitReport)> {
    if samples.is_empty() || samples.iter().all(|s| s.hist.is_empty()) {
        return Err(Error::InvalidConfig("entropy model needs at least one coded symbol".into()));
    }
    let mut model = EntropyModel::new(num_layers, num_slots, cfg.embed_dim, cfg.hidden);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5053_4900);
    let ids = model.ids;
    model.params.fill_normal(ids.e_layer, 0.5, &mut rng);
    model.params.fill_normal(ids.e_type, 0.5, &mut rng);
    let in_dim = model.in_dim() as f64;
    model.params.fill_normal(ids.w1, 1.0 / in_dim.sqrt(), &mut rng);
    let (mut sum, mut sq, mut cnt) = (0.0, 0.0, 0.0);
    for s in samples {
        for &(c, n) in &s.hist {
            sum += c as f64 * n as f64;
            sq += (c as f64).powi(2) * n as f64;
            cnt += n as f64;
        }
    }
    let mean = sum / cnt;
    let std = (sq / cnt - mean * mean).max(0.0).sqrt();
    let beta0 = (std * 3f64.sqrt() / std::f64::consts::PI).max(0.05);
    model.params.seg_mut(ids.b2).copy_from_slice(&[mean, inverse_softplus(beta0 - BETA_FLOOR)]);
    model.params.round_to_f32();

    let mut opt = AdamW::new(model.params.len(), 0.0);
    let mut history = Vec::with_capacity(cfg.steps + 1);
    let all: Vec<&GroupSample> = samples.iter().collect();
    let full = all.len() <= cfg.batch_groups;
    for step in 0..=cfg.steps {
        let batch: Vec<&GroupSample> = if full {
            all.clone()
        } else {
            let mut idx = sample(&mut rng, all.len(), cfg.batch_groups).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| all[i]).collect()
        };
        let (loss, mut grad, count) = batch_loss_grad(&model, &batch)?;
        let bits = loss / count.max(1) as f64 / std::f64::consts::LN_2;
        if !bits.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss { step, detail: format!("entropy model nll {bits}") });
        }
        history.push(bits);
        if step == cfg.steps {
            break;
        }
        let inv = 1.0 / count.max(1) as f64;
        grad.iter_mut().for_each(|g| *g *= inv);
        clip_grad_norm(&mut grad, 1.0);
        let lr = lr_at(step, cfg.lr, cfg.steps / 10, cfg.steps);
        opt.step(&mut model.params, &grad, lr);
    }
    model.params.round_to_f32();
    Ok((model, FitReport { nll_bits: history }))
}

/// Ideal codelength in bits of `codes` under the (floored) model pmf.
pub fn codelength_proxy(model: &EntropyModel, groups: &[(SymbolContext, &[i32])]) -> Result<f64> {
    let mut bits = 0.0;
    for (ctx, codes) in groups {
        let pmf = model.pmf_for(ctx)?;
        let q = ctx.q_max as i64;
        for &c in *codes {
            if (c as i64).abs() > q {
                return Err(Error::OutOfSupport(c as i64));
            }
            bits -= detmath::log2(pmf[(c as i64 + q) as usize]);
        }
    }
    Ok(bits)
}
