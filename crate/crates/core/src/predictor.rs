//! Layer-sequential block predictor g_θ.
//!
//! `z̄ = P_t·u + p_t + A_ℓ·E_ℓ + A_t·E_t`, `ŷ = O_t·(z̄ + MLP(z̄)) + o_t`, with a
//! two-layer GELU MLP of width `hidden_mult·d_lat`. All arithmetic is f64 over
//! f32-representable parameters, evaluated in a fixed order.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detmath;
use crate::error::{Error, Result};
use crate::nn::{clip_grad_norm, linear, linear_backward, lr_at, split_two, AdamW, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictorConfig {
    pub d_lat: usize,
    pub d_emb: usize,
    pub hidden_mult: usize,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig { d_lat: 256, d_emb: 64, hidden_mult: 4 }
    }
}

impl PredictorConfig {
    pub fn hidden(&self) -> usize {
        self.hidden_mult * self.d_lat
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_lat == 0 || self.d_emb == 0 || self.hidden_mult == 0 {
            return Err(Error::InvalidConfig("predictor dimensions must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct CoreIds {
    e_layer: usize,
    e_type: usize,
    a_layer: usize,
    a_type: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct TypeIds {
    p: usize,
    pb: usize,
    o: usize,
    ob: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    pub cfg: PredictorConfig,
    pub num_layers: usize,
    /// Block length per type slot.
    pub type_dims: Vec<usize>,
    pub params: ParamStore,
    core: CoreIds,
    types: Vec<TypeIds>,
}

struct Trace {
    u: Vec<f64>,
    zb: Vec<f64>,
    a: Vec<f64>,
    g: Vec<f64>,
    h: Vec<f64>,
    y: Vec<f64>,
}

/// One training pair: the previous decoded (aligned) block and the current aligned block.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub layer: usize,
    pub slot: usize,
    pub prev: Vec<f32>,
    pub target: Vec<f32>,
    /// Quantizer step used by the rate proxy.
    pub step: f32,
}

/// Modified Gram-Schmidt on the columns of a row-major `rows × cols` matrix (cols ≤ rows).
fn orthonormal_columns(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut m: Vec<f64> = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    for j in 0..cols {
        for k in 0..j {
            let dot: f64 = (0..rows).map(|i| m[i * cols + j] * m[i * cols + k]).sum();
            for i in 0..rows {
                m[i * cols + j] -= dot * m[i * cols + k];
            }
        }
        let norm = (0..rows).map(|i| m[i * cols + j].powi(2)).sum::<f64>().sqrt();
        for i in 0..rows {
            m[i * cols + j] /= norm;
        }
    }
    m
}

impl Predictor {
    /// Zero-initialized predictor (the geometry the decoder allocates before reading θ).
    pub fn new(cfg: PredictorConfig, num_layers: usize, type_dims: Vec<usize>) -> Self {
        let (dl, de, h) = (cfg.d_lat, cfg.d_emb, cfg.hidden());
        let mut p = ParamStore::new();
        let core = CoreIds {
            e_layer: p.add("theta.e_layer", vec![num_layers, de], false),
            e_type: p.add("theta.e_type", vec![type_dims.len(), de], false),
            a_layer: p.add("theta.a_layer", vec![dl, de], true),
            a_type: p.add("theta.a_type", vec![dl, de], true),
            w1: p.add("theta.w1", vec![h, dl], true),
            b1: p.add("theta.b1", vec![h], false),
            w2: p.add("theta.w2", vec![dl, h], true),
            b2: p.add("theta.b2", vec![dl], false),
        };
        let types = type_dims
            .iter()
            .enumerate()
            .map(|(t, &dt)| TypeIds {
                p: p.add(format!("theta.p{t}"), vec![dl, dt], true),
                pb: p.add(format!("theta.pb{t}"), vec![dl], false),
                o: p.add(format!("theta.o{t}"), vec![dt, dl], true),
                ob: p.add(format!("theta.ob{t}"), vec![dt], false),
            })
            .collect();
        Predictor { cfg, num_layers, type_dims, params: p, core, types }
    }

    /// Copy initialization: `O_t·P_t` is the identity (or the projection onto a random
    /// `d_lat`-subspace when `d_t > d_lat`), the MLP output layer is zero, and `P_t`
    /// is scaled by `1/input_rms[t]` so latents are O(1).
    pub fn copy_init(cfg: PredictorConfig, num_layers: usize, type_dims: Vec<usize>, input_rms: &[f64], seed: u64) -> Self {
        let mut pr = Predictor::new(cfg, num_layers, type_dims);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7072_6564);
        let dl = cfg.d_lat;
        pr.params.fill_normal(pr.core.e_layer, 1.0, &mut rng);
        pr.params.fill_normal(pr.core.e_type, 1.0, &mut rng);
        pr.params.fill_normal(pr.core.w1, 1.0 / (dl as f64).sqrt(), &mut rng);
        for t in 0..pr.types.len() {
            let dt = pr.type_dims[t];
            let rms = input_rms.get(t).copied().unwrap_or(1.0);
            let c = if rms > 1e-12 && rms.is_finite() { 1.0 / rms } else { 1.0 };
            let ids = pr.types[t];
            let (pm, om): (Vec<f64>, Vec<f64>) = if dt <= dl {
                // Q: dl × dt, P = c·Q, O = Qᵀ/c
                let q = orthonormal_columns(dl, dt, &mut rng);
                let p = q.iter().map(|v| v * c).collect();
                let mut o = vec![0.0; dt * dl];
                for i in 0..dl {
                    for j in 0..dt {
                        o[j * dl + i] = q[i * dt + j] / c;
                    }
                }
                (p, o)
            } else {
                // Q: dt × dl, P = c·Qᵀ, O = Q/c
                let q = orthonormal_columns(dt, dl, &mut rng);
                let mut p = vec![0.0; dl * dt];
                for i in 0..dt {
                    for j in 0..dl {
                        p[j * dt + i] = q[i * dl + j] * c;
                    }
                }
                (p, q.iter().map(|v| v / c).collect())
            };
            pr.params.seg_mut(ids.p).copy_from_slice(&pm);
            pr.params.seg_mut(ids.o).copy_from_slice(&om);
        }
        pr.params.round_to_f32();
        pr
    }

    pub fn num_types(&self) -> usize {
        self.type_dims.len()
    }

    fn check(&self, layer: usize, slot: usize, len: usize) -> Result<()> {
        if slot >= self.types.len() {
            return Err(Error::UnknownType(slot as u16));
        }
        if layer < 2 || layer > self.num_layers {
            return Err(Error::LayerIndexOutOfRange(layer));
        }
        if len != self.type_dims[slot] {
            return Err(Error::ShapeMismatch(format!(
                "block of length {len} for type slot {slot} (expects {})",
                self.type_dims[slot]
            )));
        }
        Ok(())
    }

    fn forward(&self, prev: &[f32], layer: usize, slot: usize) -> Result<Trace> {
        self.check(layer, slot, prev.len())?;
        let (dl, de, h) = (self.cfg.d_lat, self.cfg.d_emb, self.cfg.hidden());
        let ids = self.types[slot];
        let c = self.core;
        let ps = &self.params;
        let u: Vec<f64> = prev.iter().map(|&v| v as f64).collect();
        let mut zb = vec![0.0; dl];
        linear(ps.seg(ids.p), Some(ps.seg(ids.pb)), &u, &mut zb);
        let el = &ps.seg(c.e_layer)[(layer - 1) * de..layer * de];
        let et = &ps.seg(c.e_type)[slot * de..(slot + 1) * de];
        let mut tmp = vec![0.0; dl];
        linear(ps.seg(c.a_layer), None, el, &mut tmp);
        zb.iter_mut().zip(&tmp).for_each(|(z, v)| *z += v);
        linear(ps.seg(c.a_type), None, et, &mut tmp);
        zb.iter_mut().zip(&tmp).for_each(|(z, v)| *z += v);
        let mut a = vec![0.0; h];
        linear(ps.seg(c.w1), Some(ps.seg(c.b1)), &zb, &mut a);
        let g: Vec<f64> = a.iter().map(|&v| detmath::gelu(v)).collect();
        let mut hh = vec![0.0; dl];
        linear(ps.seg(c.w2), Some(ps.seg(c.b2)), &g, &mut hh);
        hh.iter_mut().zip(&zb).for_each(|(x, z)| *x += z);
        let mut y = vec![0.0; self.type_dims[slot]];
        linear(ps.seg(ids.o), Some(ps.seg(ids.ob)), &hh, &mut y);
        Ok(Trace { u, zb, a, g, h: hh, y })
    }

    /// Predict block `ℓ` of type slot `t` from the previous decoded block.
    pub fn predict_block(&self, prev: &[f32], layer: usize, slot: usize) -> Result<Vec<f32>> {
        Ok(self.forward(prev, layer, slot)?.y.into_iter().map(|v| v as f32).collect())
    }

    /// Predict every block of a record; blocks are independent so this runs in parallel.
    pub fn predict_blocks(&self, prev: &[Vec<f32>], layer: usize, slot: usize) -> Result<Vec<Vec<f32>>> {
        prev.par_iter().map(|b| self.predict_block(b, layer, slot)).collect()
    }

    /// Backpropagate `dy` through a traced forward pass, accumulating into `grad`.
    fn backward(&self, tr: &Trace, layer: usize, slot: usize, dy: &[f64], grad: &mut [f64]) {
        let (dl, de) = (self.cfg.d_lat, self.cfg.d_emb);
        let ids = self.types[slot];
        let c = self.core;
        let ps = &self.params;
        let mut dh = vec![0.0; dl];
        {
            let (go, gob) = split_two(grad, ps.range(ids.o), ps.range(ids.ob));
            linear_backward(ps.seg(ids.o), &tr.h, dy, go, Some(gob), Some(&mut dh));
        }
        let mut dg = vec![0.0; tr.g.len()];
        {
            let (gw2, gb2) = split_two(grad, ps.range(c.w2), ps.range(c.b2));
            linear_backward(ps.seg(c.w2), &tr.g, &dh, gw2, Some(gb2), Some(&mut dg));
        }
        let da: Vec<f64> = dg.iter().zip(&tr.a).map(|(d, &a)| d * detmath::gelu_grad(a)).collect();
        let mut dz = dh;
        {
            let (gw1, gb1) = split_two(grad, ps.range(c.w1), ps.range(c.b1));
            linear_backward(ps.seg(c.w1), &tr.zb, &da, gw1, Some(gb1), Some(&mut dz));
        }
        let el_off = ps.range(c.e_layer).start + (layer - 1) * de;
        let et_off = ps.range(c.e_type).start + slot * de;
        let el: Vec<f64> = grad_slice(ps.seg(c.e_layer), (layer - 1) * de, de);
        let et: Vec<f64> = grad_slice(ps.seg(c.e_type), slot * de, de);
        let mut d_el = vec![0.0; de];
        linear_backward(ps.seg(c.a_layer), &el, &dz, &mut grad[ps.range(c.a_layer)], None, Some(&mut d_el));
        let mut d_et = vec![0.0; de];
        linear_backward(ps.seg(c.a_type), &et, &dz, &mut grad[ps.range(c.a_type)], None, Some(&mut d_et));
        for k in 0..de {
            grad[el_off + k] += d_el[k];
            grad[et_off + k] += d_et[k];
        }
        let (gp, gpb) = split_two(grad, ps.range(ids.p), ps.range(ids.pb));
        linear_backward(ps.seg(ids.p), &tr.u, &dz, gp, Some(gpb), None);
    }

    pub fn write(&self, out: &mut Vec<u8>) {
        self.params.write_table(out);
    }

    pub fn read(&mut self, bytes: &[u8]) -> Result<usize> {
        self.params.read_table(bytes)
    }
}

fn grad_slice(v: &[f64], off: usize, n: usize) -> Vec<f64> {
    v[off..off + n].to_vec()
}

/// Optional rate term for the joint phase: λ·E[−log2 p(x)] on noisy codes
/// `x = (t − ŷ)/s + u`, `u ~ U(−½, ½)`, under a unit discretized logistic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateTerm {
    pub lambda: f64,
}

fn unit_bin_mass(x: f64) -> (f64, f64) {
    // p(x) = σ(x+½) − σ(x−½), dp/dx = σ'(x+½) − σ'(x−½)
    let (hi, lo) = (x + 0.5, x - 0.5);
    let p = if lo > 0.0 {
        detmath::sigmoid(-lo) - detmath::sigmoid(-hi)
    } else {
        detmath::sigmoid(hi) - detmath::sigmoid(lo)
    };
    let d = |z: f64| detmath::sigmoid(z) * detmath::sigmoid(-z);
    (p.max(1e-300), d(hi) - d(lo))
}

/// Loss and gradient over a batch. Distortion is the mean squared prediction error
/// per element; the rate term adds λ·bits per element.
fn batch_loss_grad(
    pr: &Predictor,
    batch: &[&TrainSample],
    rate: Option<(RateTerm, &[Vec<f64>])>,
) -> Result<(f64, Vec<f64>)> {
    let n_el: usize = batch.iter().map(|s| s.target.len()).sum();
    let inv = 1.0 / n_el.max(1) as f64;
    let n = pr.params.len();
    let chunks: Vec<(usize, &[&TrainSample])> = batch.chunks(8).enumerate().collect();
    let parts: Vec<Result<(f64, Vec<f64>)>> = chunks
        .par_iter()
        .map(|&(ci, chunk)| {
            let mut g = vec![0.0; n];
            let mut loss = 0.0;
            for (k, s) in chunk.iter().enumerate() {
                let tr = pr.forward(&s.prev, s.layer, s.slot)?;
                let mut dy = vec![0.0; tr.y.len()];
                for (j, (&y, &t)) in tr.y.iter().zip(&s.target).enumerate() {
                    let e = y - t as f64;
                    loss += e * e * inv;
                    dy[j] = 2.0 * e * inv;
                }
                if let Some((rt, noise)) = rate {
                    let u = &noise[ci * 8 + k];
                    let st = s.step as f64;
                    for (j, (&y, &t)) in tr.y.iter().zip(&s.target).enumerate() {
                        let x = (t as f64 - y) / st + u[j];
                        let (p, dp) = unit_bin_mass(x);
                        loss -= rt.lambda * detmath::log2(p) * inv;
                        // d(−log2 p)/dy = −dp/(p ln2) · dx/dy, dx/dy = −1/s
                        dy[j] += rt.lambda * dp / (p * std::f64::consts::LN_2 * st) * inv;
                    }
                }
                pr.backward(&tr, s.layer, s.slot, &dy, &mut g);
            }
            Ok((loss, g))
        })
        .collect();
    let mut loss = 0.0;
    let mut grad = vec![0.0; n];
    for p in parts {
        let (l, g) = p?;
        loss += l;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Predictor-only steps (distortion loss).
    pub steps: usize,
    /// Joint steps with the rate term.
    pub joint_steps: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup: usize,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            joint_steps: 500,
            lr: 1e-3,
            weight_decay: 1e-2,
            warmup: 500,
            clip_norm: 1.0,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn total_steps(&self) -> usize {
        self.steps + self.joint_steps
    }
}

/// Stateful optimizer loop so callers can interleave training with re-alignment.
pub struct Trainer {
    pub cfg: TrainConfig,
    opt: AdamW,
    rng: ChaCha8Rng,
    step: usize,
    pub losses: Vec<f64>,
}

impl Trainer {
    pub fn new(pr: &Predictor, cfg: TrainConfig) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7472_6169);
        Trainer { opt: AdamW::new(pr.params.len(), cfg.weight_decay), cfg, rng, step: 0, losses: Vec::new() }
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn done(&self) -> bool {
        self.step >= self.cfg.total_steps()
    }

    /// Run up to `n` further steps on `samples`. Steps past `cfg.steps` include the rate term.
    pub fn run(&mut self, pr: &mut Predictor, samples: &[TrainSample], n: usize, rate: Option<RateTerm>) -> Result<()> {
        if samples.is_empty() {
            return Ok(());
        }
        let total = self.cfg.total_steps();
        let end = (self.step + n).min(total);
        while self.step < end {
            let bs = self.cfg.batch_size.clamp(1, samples.len());
            let mut idx = sample(&mut self.rng, samples.len(), bs).into_vec();
            idx.sort_unstable();
            let batch: Vec<&TrainSample> = idx.iter().map(|&i| &samples[i]).collect();
            let joint = self.step >= self.cfg.steps;
            let noise: Option<Vec<Vec<f64>>> = (joint && rate.is_some()).then(|| {
                batch.iter().map(|s| (0..s.target.len()).map(|_| self.rng.gen_range(-0.5..0.5)).collect()).collect()
            });
            let r = match (&noise, rate) {
                (Some(nz), Some(rt)) => Some((rt, nz.as_slice())),
                _ => None,
            };
            let (loss, mut grad) = batch_loss_grad(pr, &batch, r)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    step: self.step,
                    detail: format!("predictor loss {loss} on batch {:?}", &idx[..idx.len().min(8)]),
                });
            }
            self.losses.push(loss);
            clip_grad_norm(&mut grad, self.cfg.clip_norm);
            let lr = lr_at(self.step, self.cfg.lr, self.cfg.warmup, total);
            self.opt.step(&mut pr.params, &grad, lr);
            self.step += 1;
        }
        Ok(())
    }
}

/// Train from `init` on `samples` for the configured steps; parameters are rounded to
/// f32 on return. Returns the per-step batch losses.
pub fn train_predictor(
    init: Predictor,
    samples: &[TrainSample],
    cfg: &TrainConfig,
    rate: Option<RateTerm>,
) -> Result<(Predictor, Vec<f64>)> {
    let mut pr = init;
    let mut tr = Trainer::new(&pr, cfg.clone());
    tr.run(&mut pr, samples, cfg.total_steps(), rate)?;
    pr.params.round_to_f32();
    Ok((pr, tr.losses))
}

/// Mean squared prediction error per element over `samples`.
pub fn distortion(pr: &Predictor, samples: &[TrainSample]) -> Result<f64> {
    let refs: Vec<&TrainSample> = samples.iter().collect();
    Ok(batch_loss_grad(pr, &refs, None)?.0)
}

/// Compare analytic gradients of the distortion loss with central differences on 200
/// sampled coordinates; returns the maximum relative error. `fault_scale ≠ 1` multiplies
/// the analytic gradient (negative control).
pub fn gradient_check_with(pr: &Predictor, batch: &[TrainSample], eps: f64, fault_scale: f64, seed: u64) -> Result<f64> {
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(Error::InvalidConfig(format!("finite-difference step {eps} outside [1e-6, 1e-3]")));
    }
    let refs: Vec<&TrainSample> = batch.iter().collect();
    let (_, grad) = batch_loss_grad(pr, &refs, None)?;
    let gmax = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let floor = (1e-7 * gmax).max(1e-300);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords = sample(&mut rng, pr.params.len(), 200.min(pr.params.len())).into_vec();
    let mut worst = 0.0f64;
    for k in coords {
        let mut plus = pr.clone();
        plus.params.data[k] += eps;
        let mut minus = pr.clone();
        minus.params.data[k] -= eps;
        let fp = batch_loss_grad(&plus, &refs, None)?.0;
        let fm = batch_loss_grad(&minus, &refs, None)?.0;
        let num = (fp - fm) / (2.0 * eps);
        let ana = grad[k] * fault_scale;
        let rel = (ana - num).abs() / ana.abs().max(num.abs()).max(floor);
        worst = worst.max(rel);
    }
    Ok(worst)
}

pub fn gradient_check(pr: &Predictor, batch: &[TrainSample], eps: f64) -> Result<f64> {
    gradient_check_with(pr, batch, eps, 1.0, 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> PredictorConfig {
        PredictorConfig { d_lat: 12, d_emb: 4, hidden_mult: 2 }
    }

    fn randomize(pr: &mut Predictor, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for id in 0..pr.params.segments.len() {
            pr.params.fill_normal(id, 0.3, &mut rng);
        }
    }

    fn samples(pr: &Predictor, n: usize, seed: u64) -> Vec<TrainSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|k| {
                let slot = k % pr.num_types();
                let d = pr.type_dims[slot];
                TrainSample {
                    layer: 2 + k % (pr.num_layers - 1),
                    slot,
                    prev: (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                    target: (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                    step: 0.1,
                }
            })
            .collect()
    }

    #[test]
    fn zero_network_predicts_zero() {
        let pr = Predictor::new(small(), 3, vec![5, 20]);
        assert_eq!(pr.predict_block(&[1.0; 5], 2, 0).unwrap(), vec![0.0; 5]);
        assert!(matches!(pr.predict_block(&[1.0; 5], 1, 0), Err(Error::LayerIndexOutOfRange(1))));
        assert!(matches!(pr.predict_block(&[1.0; 5], 2, 2), Err(Error::UnknownType(2))));
        assert!(matches!(pr.predict_block(&[1.0; 4], 2, 0), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn copy_init_reproduces_input() {
        let pr = Predictor::copy_init(small(), 4, vec![5, 12], &[0.5, 2.0], 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for slot in 0..2 {
            let d = pr.type_dims[slot];
            let u: Vec<f32> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y = pr.predict_block(&u, 3, slot).unwrap();
            for (a, b) in u.iter().zip(&y) {
                assert!((a - b).abs() < 1e-5, "{a} vs {b}");
            }
        }
        // d_t > d_lat still produces the right shape
        let wide = Predictor::copy_init(small(), 2, vec![30], &[1.0], 0);
        assert_eq!(wide.predict_block(&[0.1; 30], 2, 0).unwrap().len(), 30);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut pr = Predictor::new(small(), 4, vec![5, 7]);
        randomize(&mut pr, 8);
        let batch = samples(&pr, 6, 2);
        let err = gradient_check(&pr, &batch, 1e-4).unwrap();
        assert!(err < 1e-4, "max rel err {err}");
        let bad = gradient_check_with(&pr, &batch, 1e-4, 1.5, 0).unwrap();
        assert!(bad > 1e-1);
    }

    #[test]
    fn linear_only_gradients_are_exact() {
        let mut pr = Predictor::new(small(), 3, vec![4]);
        randomize(&mut pr, 1);
        for id in [pr.core.w1, pr.core.w2] {
            pr.params.seg_mut(id).iter_mut().for_each(|v| *v = 0.0);
        }
        let batch = samples(&pr, 4, 5);
        assert!(gradient_check(&pr, &batch, 1e-4).unwrap() < 1e-6);
    }

    #[test]
    fn training_is_reproducible_and_zero_steps_is_identity() {
        let init = Predictor::copy_init(small(), 4, vec![6], &[1.0], 0);
        let data = samples(&init, 24, 9);
        let zero = TrainConfig { steps: 0, joint_steps: 0, ..Default::default() };
        assert_eq!(train_predictor(init.clone(), &data, &zero, None).unwrap().0, init);
        let cfg = TrainConfig { steps: 30, joint_steps: 10, warmup: 5, batch_size: 8, ..Default::default() };
        let rate = Some(RateTerm { lambda: 0.01 });
        let (a, la) = train_predictor(init.clone(), &data, &cfg, rate).unwrap();
        let (b, lb) = train_predictor(init, &data, &cfg, rate).unwrap();
        assert_eq!(a.params.data, b.params.data);
        assert_eq!(la, lb);
        assert_eq!(la.len(), 40);
    }
}
