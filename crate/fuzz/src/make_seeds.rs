//! Writes the checked-in corpus seeds: `cargo run --bin make_seeds` from `fuzz/`.

use std::fs;
use std::path::Path;

use mcwc_core::align::random_permutation;
use mcwc_core::codec::{encode_checkpoint, CodecConfig};
use mcwc_core::container::to_bytes;
use mcwc_core::entropy::{range_encode, Cdf};
use mcwc_core::permcode::{encode_perm_stream, lehmer_encode, PermModelParams};
use mcwc_core::predictor::PredictorConfig;
use mcwc_core::synth::{drift_checkpoint, drift_spec, random_checkpoint, DriftConfig};

fn put(target: &str, name: &str, bytes: &[u8]) {
    let dir = Path::new("corpus").join(target);
    fs::create_dir_all(&dir).unwrap();
    fs::write(dir.join(name), bytes).unwrap();
}

fn tiny_config() -> CodecConfig {
    let mut c = CodecConfig::default();
    c.predictor = PredictorConfig { d_lat: 4, d_emb: 2, hidden_mult: 1 };
    c.train.steps = 10;
    c.train.joint_steps = 0;
    c.train.warmup = 2;
    c.entropy.steps = 10;
    c.entropy.hidden = 4;
    c.entropy.embed_dim = 2;
    c.block_types = vec![drift_spec()];
    c
}

fn main() {
    let drift = drift_checkpoint(&DriftConfig { layers: 4, blocks: 4, d_in: 3, d_out: 2, norm_len: 3, ..Default::default() }).unwrap();
    put("container", "drift", &to_bytes(&drift.checkpoint).unwrap());
    let (random, types) = random_checkpoint(1, 400).unwrap();
    put("container", "random", &to_bytes(&random).unwrap());

    let mut streams = Vec::new();
    let base = tiny_config();
    streams.push(("default", encode_checkpoint(&drift.checkpoint, &base, None).unwrap().bytes));
    let mut c = base.clone();
    c.ablation.fixed_length_codes = true;
    c.ablation.fixed_length_perms = true;
    streams.push(("fixed_length", encode_checkpoint(&drift.checkpoint, &c, None).unwrap().bytes));
    let mut c = base.clone();
    c.ablation.no_predictor = true;
    c.quant.residual_step = Some(1e-3);
    streams.push(("no_predictor", encode_checkpoint(&drift.checkpoint, &c, None).unwrap().bytes));
    let mut c = base.clone();
    c.block_types = types;
    streams.push(("multi_type", encode_checkpoint(&random, &c, None).unwrap().bytes));
    for (name, bytes) in &streams {
        for target in ["header", "decode", "rate_report"] {
            put(target, name, bytes);
        }
    }

    let weights = [40u8, 10, 3, 1, 1];
    let probs: Vec<f64> = weights.iter().map(|&w| w as f64 + 1.0).collect();
    let cdf = Cdf::from_probs(&probs).unwrap();
    let syms: Vec<usize> = (0..300).map(|i| (i * i) % 7 % 5).collect();
    let mut rd = vec![weights.len() as u8 - 1];
    rd.extend_from_slice(&weights);
    rd.extend_from_slice(&(syms.len() as u16).to_le_bytes());
    rd.extend(range_encode(&syms, |_| &cdf));
    put("range_decode", "peaked", &rd);

    let model = PermModelParams::default();
    // The second byte seeds the predecessor; an odd value selects delta mode.
    for (name, b, seed) in [("abs_16", 16usize, 2u8), ("delta_40", 40, 5)] {
        let prev = (seed & 1 == 1).then(|| lehmer_encode(&random_permutation(b, seed as u64)));
        let digits = lehmer_encode(&random_permutation(b, 99));
        let mut s = vec![(b - 1) as u8, seed];
        s.extend(encode_perm_stream(&digits, prev.as_deref(), &model).unwrap());
        put("perm_stream", name, &s);
    }

    let digits: Vec<u8> = lehmer_encode(&random_permutation(20, 4)).iter().map(|&d| d as u8).collect();
    put("lehmer", "b20", &digits);
    put("lehmer", "identity", &[0u8; 8]);

    put("block_spec", "ffn", serde_json::to_string(&vec![drift_spec()]).unwrap().as_bytes());
    put("config", "defaults", mcwc_cli::config::Document::default().to_toml().as_bytes());
    put("config", "partial", b"[codec]\nkeyframe_interval = 8\n[codec.ablation]\nno_predictor = true\n[sweep]\nlambdas = [0.0, 0.01]\n");
}
