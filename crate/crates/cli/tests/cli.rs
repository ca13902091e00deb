use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mcwc_cli::config::Document;
use mcwc_core::codec::encode_checkpoint;
use mcwc_core::container::{save_checkpoint, to_bytes};
use mcwc_core::predictor::PredictorConfig;
use mcwc_core::synth::{drift_checkpoint, DriftConfig};
use tempfile::TempDir;

fn mcwc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mcwc")).args(args).output().expect("binary runs")
}

fn fast_document() -> Document {
    let mut d = Document::default();
    let c = &mut d.codec;
    c.predictor = PredictorConfig { d_lat: 16, d_emb: 8, hidden_mult: 2 };
    c.train.steps = 40;
    c.train.joint_steps = 10;
    c.train.warmup = 5;
    c.entropy.steps = 30;
    c.entropy.hidden = 16;
    c.block_types = vec![mcwc_core::synth::drift_spec()];
    d
}

struct Fixture {
    dir: TempDir,
    ckpt: PathBuf,
    cfg: PathBuf,
    doc: Document,
}

impl Fixture {
    fn new(layers: usize) -> Self {
        let dir = TempDir::new().unwrap();
        let suite = drift_checkpoint(&DriftConfig { layers, blocks: 8, seed: 5, ..Default::default() }).unwrap();
        let ckpt = dir.path().join("in.ckpt");
        save_checkpoint(&suite.checkpoint, &ckpt).unwrap();
        let doc = fast_document();
        let cfg = dir.path().join("cfg.toml");
        std::fs::write(&cfg, doc.to_toml()).unwrap();
        Fixture { dir, ckpt, cfg, doc }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn encode_then_decode_matches_encoder_reconstruction() {
    let f = Fixture::new(6);
    let out = f.path("out.mcwc");
    let o = mcwc(&["encode", s(&f.ckpt), "-c", s(&f.cfg), "-o", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("Residual codes"));

    let ckpt = mcwc_core::container::load_checkpoint(&f.ckpt).unwrap();
    let reference = encode_checkpoint(&ckpt, &f.doc.codec, None).unwrap();
    assert_eq!(std::fs::read(&out).unwrap(), reference.bytes, "encoding is deterministic");

    let expected = to_bytes(&reference.reconstruction).unwrap();
    for w in ["1", "8"] {
        let rec = f.path(&format!("rec{w}.ckpt"));
        let o = mcwc(&["decode", s(&out), "-o", s(&rec), "--workers", w]);
        assert_eq!(o.status.code(), Some(0));
        assert!(stdout(&o).contains("decode time:"));
        assert_eq!(std::fs::read(&rec).unwrap(), expected);
    }
}

#[test]
fn inspect_lists_five_components_summing_to_total() {
    let f = Fixture::new(5);
    let out = f.path("out.mcwc");
    assert_eq!(mcwc(&["encode", s(&f.ckpt), "-c", s(&f.cfg), "-o", s(&out)]).status.code(), Some(0));
    let o = mcwc(&["inspect", s(&out)]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("layers             5"));
    let value = |name: &str| -> u64 {
        let line = text.lines().find(|l| l.starts_with(name)).unwrap_or_else(|| panic!("{name} missing"));
        line[24..40].trim().parse().unwrap()
    };
    let parts: u64 = ["Keyframe codes", "Residual codes", "Permutation side-info", "Quantizer side-info", "Other overhead"]
        .iter()
        .map(|n| value(n))
        .sum();
    assert_eq!(parts, value("Total"));
    assert_eq!(value("Total"), 8 * std::fs::metadata(&out).unwrap().len());

    let o = mcwc(&["inspect", s(&out), "--json"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["rate"]["total_bits"].as_u64(), Some(value("Total")));
}

#[test]
fn usage_errors_exit_one() {
    let o = mcwc(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(mcwc(&["decode", "/nonexistent/x.mcwc"]).status.code(), Some(1));
    let f = Fixture::new(2);
    assert_eq!(mcwc(&["encode", s(&f.ckpt), "-o", "/nonexistent/dir/out.mcwc"]).status.code(), Some(1));
    let bad = f.path("bad.toml");
    std::fs::write(&bad, "[codec]\nkeyframe_interval = 0\n").unwrap();
    assert_eq!(mcwc(&["encode", s(&f.ckpt), "-c", s(&bad)]).status.code(), Some(1));
    std::fs::write(&bad, "[codec]\nunknown_knob = 1\n").unwrap();
    assert_eq!(mcwc(&["encode", s(&f.ckpt), "-c", s(&bad)]).status.code(), Some(1));
    assert_eq!(mcwc(&["--help"]).status.code(), Some(0));
}

#[test]
fn corrupt_input_exits_two_without_partial_output() {
    let f = Fixture::new(4);
    let out = f.path("out.mcwc");
    assert_eq!(mcwc(&["encode", s(&f.ckpt), "-c", s(&f.cfg), "-o", s(&out)]).status.code(), Some(0));
    let mut bytes = std::fs::read(&out).unwrap();
    let n = bytes.len();
    bytes.truncate(n * 2 / 3);
    let bad = f.path("bad.mcwc");
    std::fs::write(&bad, &bytes).unwrap();
    let rec = f.path("rec.ckpt");
    let o = mcwc(&["decode", s(&bad), "-o", s(&rec)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!rec.exists());
    let leftovers: Vec<_> = std::fs::read_dir(f.dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(leftovers.len(), 4, "{leftovers:?}");
    assert_eq!(mcwc(&["inspect", s(&bad)]).status.code(), Some(2));
    std::fs::write(&bad, b"not a checkpoint").unwrap();
    assert_eq!(mcwc(&["encode", s(&bad), "-c", s(&f.cfg)]).status.code(), Some(2));
}

#[test]
fn corrupt_record_error_names_the_record() {
    let f = Fixture::new(4);
    let out = f.path("out.mcwc");
    assert_eq!(mcwc(&["encode", s(&f.ckpt), "-c", s(&f.cfg), "-o", s(&out)]).status.code(), Some(0));
    let bytes = std::fs::read(&out).unwrap();
    let stream = mcwc_core::codec::Stream::open(&bytes).unwrap();
    let cut = stream.layout.end() + 3;
    let mut broken = bytes[..cut].to_vec();
    broken.resize(bytes.len(), 0xAB);
    broken[bytes.len() - 16..].copy_from_slice(&bytes[bytes.len() - 16..]);
    let bad = f.path("bad.mcwc");
    std::fs::write(&bad, &broken).unwrap();
    let o = mcwc(&["decode", s(&bad), "-o", s(&f.path("r.ckpt")), "--workers", "1"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("layer") || err.contains("record"), "{err}");
}

#[test]
fn sweep_and_ablation_flags() {
    let f = Fixture::new(4);
    let out = f.path("out.mcwc");
    let report = f.path("rate.json");
    let o = mcwc(&[
        "encode",
        s(&f.ckpt),
        "-c",
        s(&f.cfg),
        "-o",
        s(&out),
        "--lambda",
        "0,0.05",
        "--no-predictor",
        "--fixed-length",
        "--seed",
        "3",
        "--workers",
        "2",
        "--report",
        s(&report),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("lambda")).count(), 2);
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(v["rate"]["total_bits"].as_u64(), Some(8 * std::fs::metadata(&out).unwrap().len()));
    let o = mcwc(&["inspect", s(&out)]);
    assert!(stdout(&o).contains("absent (fixed-length codes)"));
    for flag in ["--no-alignment", "--random-alignment", "--residual-energy-alignment"] {
        let o = mcwc(&["encode", s(&f.ckpt), "-c", s(&f.cfg), "-o", s(&out), flag, "--keyframe-interval", "2"]);
        assert_eq!(o.status.code(), Some(0), "{flag}");
    }
    let o = mcwc(&["encode", s(&f.ckpt), "-c", s(&f.cfg), "--no-alignment", "--random-alignment"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn spec_file_and_logging_env() {
    let f = Fixture::new(3);
    let spec = f.path("spec.json");
    let body = serde_json::json!({ "block_types": [mcwc_core::synth::drift_spec()] });
    std::fs::write(&spec, body.to_string()).unwrap();
    let mut doc = f.doc.clone();
    doc.codec.block_types.clear();
    let cfg = f.path("nospec.toml");
    std::fs::write(&cfg, doc.to_toml()).unwrap();
    let out = f.path("out.mcwc");
    let o = Command::new(env!("CARGO_BIN_EXE_mcwc"))
        .args(["encode", s(&f.ckpt), "-c", s(&cfg), "--spec", s(&spec), "-o", s(&out)])
        .env("MCWC_LOG", "info")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stderr).contains("INFO"));
    let v: serde_json::Value = serde_json::from_slice(&mcwc(&["inspect", s(&out), "--json"]).stdout).unwrap();
    assert_eq!(v["block_types"][0]["name"], "ffn");
}

#[test]
fn diagnose_writes_csv_json_and_histogram() {
    let f = Fixture::new(5);
    let csv = f.path("rep.csv");
    let hist = f.path("hist.csv");
    let o = mcwc(&["diagnose", s(&f.ckpt), "-c", s(&f.cfg), "-o", s(&csv), "--histogram", s(&hist)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("layer,type_id,cos_before_mean"));
    assert_eq!(text.lines().count(), 1 + 4 + 1);
    assert!(std::fs::read_to_string(&hist).unwrap().starts_with("lower,upper,before,after"));
    let o = mcwc(&["diagnose", s(&f.ckpt), "-c", s(&f.cfg), "--format", "json"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["aggregate"]["cos_after"]["mean"].as_f64().unwrap() > v["aggregate"]["cos_before"]["mean"].as_f64().unwrap());
}

#[test]
fn breakeven_presets_and_overrides() {
    let o = mcwc(&["breakeven"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("402 deployments"));
    let o = mcwc(&["breakeven", "--compressed-gb", "2.8"]);
    assert!(stdout(&o).contains("never"));
    let o = mcwc(&["breakeven", "--params", "1.4e9", "--bpp", "4.2"]);
    assert!(stdout(&o).contains("0.7350 GB"));
    assert_eq!(mcwc(&["breakeven", "--bandwidth-gb-s", "0"]).status.code(), Some(1));
    assert_eq!(mcwc(&["breakeven", "--params", "5"]).status.code(), Some(1));
}

#[test]
fn config_and_selftest() {
    let dir = TempDir::new().unwrap();
    let p = dir.path().join("default.toml");
    assert_eq!(mcwc(&["config", "-o", s(&p)]).status.code(), Some(0));
    assert_eq!(Document::load(&p).unwrap(), Document::default());
    let o = mcwc(&["selftest", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(!stdout(&o).contains("FAIL"));
}
