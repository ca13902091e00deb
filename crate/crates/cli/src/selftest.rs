//! Quick property checks runnable from an installed binary.

use mcwc_core::align::random_permutation;
use mcwc_core::blocks::Permutation;
use mcwc_core::codec::{decode_checkpoint, decode_segments_parallel, encode_checkpoint, rate_report, CodecConfig};
use mcwc_core::container::to_bytes;
use mcwc_core::diagnostics::{
    break_even, mha_negative_control, mlp_negative_control, verify_mha_invariance, verify_mlp_invariance, Activation,
    DeploymentScenario, Mha, Mlp,
};
use mcwc_core::entropy::{range_decode, range_encode, Cdf};
use mcwc_core::permcode::{lehmer_decode, lehmer_encode};
use mcwc_core::predictor::PredictorConfig;
use mcwc_core::quant::{dequantize, init_quantizer, quantize};
use mcwc_core::synth::random_checkpoint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Failure, Outcome};

type Check = fn(u64) -> Result<String, String>;

fn range_coder(seed: u64) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cdfs: Vec<Cdf> = (0..4)
        .map(|_| {
            let n = rng.gen_range(2..40);
            let p: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() + 1e-3).collect();
            let z: f64 = p.iter().sum();
            Cdf::from_probs(&p.iter().map(|v| v / z).collect::<Vec<_>>()).map_err(|e| e.to_string())
        })
        .collect::<Result<_, _>>()?;
    let which: Vec<usize> = (0..20_000).map(|_| rng.gen_range(0..cdfs.len())).collect();
    let syms: Vec<usize> = which.iter().map(|&k| rng.gen_range(0..cdfs[k].num_symbols())).collect();
    let bytes = range_encode(&syms, |i| &cdfs[which[i]]);
    let back = range_decode(&bytes, |i| &cdfs[which[i]], syms.len()).map_err(|e| e.to_string())?;
    if back != syms {
        return Err("decoded symbols differ".into());
    }
    Ok(format!("{} symbols in {} bytes", syms.len(), bytes.len()))
}

fn lehmer(seed: u64) -> Result<String, String> {
    let mut n = 0;
    for b in 1..=64usize {
        for k in 0..20 {
            let p = random_permutation(b, seed ^ (b as u64 * 1000 + k));
            let back = lehmer_decode(&lehmer_encode(&p)).map_err(|e| e.to_string())?;
            if back != p {
                return Err(format!("B = {b} round trip failed"));
            }
            n += 1;
        }
    }
    Ok(format!("{n} permutations"))
}

fn quantizer(seed: u64) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f32> = (0..50_000).map(|_| rng.gen_range(-1.0f32..1.0) * rng.gen_range(0.0f32..2.0)).collect();
    let q = init_quantizer(&x, 500, 0.8, 127, false).map_err(|e| e.to_string())?;
    let (c, _) = quantize(&x, &q).map_err(|e| e.to_string())?;
    let y = dequantize(&c, &q).map_err(|e| e.to_string())?;
    let (c2, _) = quantize(&y, &q).map_err(|e| e.to_string())?;
    if c2 != c {
        return Err("quantize after dequantize changed codes".into());
    }
    let mut worst = 0.0f64;
    for (k, (a, b)) in x.iter().zip(&y).enumerate() {
        let code = c[k].unsigned_abs();
        if code < q.q_max {
            worst = worst.max((*a as f64 - *b as f64).abs() / q.step[k / q.group_len] as f64);
        }
    }
    if worst > 0.5 + 1e-6 {
        return Err(format!("error {worst} steps exceeds half a step"));
    }
    Ok(format!("max unclipped error {worst:.4} steps"))
}

fn mlp(seed: u64) -> Result<String, String> {
    let mut worst = 0.0f64;
    let mut control = f64::INFINITY;
    for k in 0..10 {
        let act = if k % 2 == 0 { Activation::Relu } else { Activation::Gelu };
        let m = Mlp::random(6, 16, 4, act, seed + k);
        let p = random_permutation(16, seed + 100 + k);
        let probes: Vec<Vec<f64>> = (0..16).map(|i| (0..6).map(|j| ((i * 6 + j) as f64 * 0.71).sin()).collect()).collect();
        worst = worst.max(verify_mlp_invariance(&m, &p, &probes).map_err(|e| e.to_string())?);
        if !p.is_identity() {
            control = control.min(mlp_negative_control(&m, &p, &probes).map_err(|e| e.to_string())?);
        }
    }
    if worst >= 1e-10 || control <= 1e-3 {
        return Err(format!("invariance {worst:e}, control {control:e}"));
    }
    Ok(format!("max difference {worst:e}, control ≥ {control:.3e}"))
}

fn mha(seed: u64) -> Result<String, String> {
    let mut worst = 0.0f64;
    let mut control = f64::INFINITY;
    for k in 0..5 {
        let m = Mha::random(4, 8, seed + k);
        let mut p = random_permutation(4, seed + 50 + k);
        if p.is_identity() {
            p = Permutation::new(vec![1, 0, 3, 2]).expect("valid permutation");
        }
        let probes: Vec<Vec<Vec<f64>>> =
            vec![(0..6).map(|t| (0..32).map(|j| ((t * 32 + j) as f64 * 0.37).cos()).collect()).collect()];
        worst = worst.max(verify_mha_invariance(&m, &p, &probes).map_err(|e| e.to_string())?);
        control = control.min(mha_negative_control(&m, &p, &probes).map_err(|e| e.to_string())?);
    }
    if worst >= 1e-10 || control <= 1e-3 {
        return Err(format!("invariance {worst:e}, control {control:e}"));
    }
    Ok(format!("max difference {worst:e}, control ≥ {control:.3e}"))
}

fn codec(seed: u64) -> Result<String, String> {
    let (ckpt, types) = random_checkpoint(seed, 20_000).map_err(|e| e.to_string())?;
    let mut cfg = CodecConfig::default();
    cfg.seed = seed;
    cfg.block_types = types;
    cfg.predictor = PredictorConfig { d_lat: 16, d_emb: 8, hidden_mult: 2 };
    cfg.train.steps = 40;
    cfg.train.joint_steps = 10;
    cfg.train.warmup = 5;
    cfg.entropy.steps = 30;
    cfg.entropy.hidden = 16;
    let out = encode_checkpoint(&ckpt, &cfg, None).map_err(|e| e.to_string())?;
    let e = |e: mcwc_core::error::Error| e.to_string();
    let reference = to_bytes(&out.reconstruction).map_err(e)?;
    let seq = to_bytes(&decode_checkpoint(&out.bytes).map_err(e)?).map_err(e)?;
    let par = to_bytes(&decode_segments_parallel(&out.bytes, 4).map_err(e)?).map_err(e)?;
    if seq != reference || par != reference {
        return Err("decoded checkpoint differs from the encoder reconstruction".into());
    }
    let rb = rate_report(&out.bytes).map_err(e)?;
    if rb.total_bits != 8 * out.bytes.len() as u64 {
        return Err("rate components do not sum to the file size".into());
    }
    Ok(format!("{} layers, {} bytes, {:.3} bits/param", ckpt.num_layers(), out.bytes.len(), rb.bits_per_param()))
}

fn breakeven(_: u64) -> Result<String, String> {
    match break_even(&DeploymentScenario::pythia_1_4b()) {
        Ok(402) => Ok("402 deployments".into()),
        other => Err(format!("expected 402, got {other:?}")),
    }
}

const CHECKS: [(&str, Check); 7] = [
    ("range coder round trip", range_coder),
    ("lehmer round trip", lehmer),
    ("quantizer half-step bound", quantizer),
    ("mlp invariance", mlp),
    ("mha invariance", mha),
    ("codec round trip", codec),
    ("break-even preset", breakeven),
];

pub fn run(seed: u64) -> Outcome {
    let mut failed = 0;
    for (name, check) in CHECKS {
        match check(seed) {
            Ok(detail) => println!("PASS  {name:<28} {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name:<28} {why}");
            }
        }
    }
    if failed > 0 {
        return Err(Failure::Data(format!("{failed} of {} checks failed", CHECKS.len())));
    }
    Ok(())
}
