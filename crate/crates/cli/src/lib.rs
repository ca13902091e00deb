//! `mcwc` command-line front end.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use mcwc_core::codec::{
    decode_segments_parallel, encode_checkpoint, encode_sweep, rate_report, ActivationSet, EncodeOutput, Stream,
};
use mcwc_core::container::{load_checkpoint, param_count, to_bytes};
use mcwc_core::diagnostics::{bitstream_size_bytes, break_even, octave_edges, predictability_report};
use mcwc_core::error::Error;

pub mod config;
pub mod selftest;

use config::{load_block_spec, Document};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Data(_) => EXIT_DATA,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(_) => Failure::Usage(e.to_string()),
            other => Failure::Data(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

#[derive(Parser, Debug)]
#[command(name = "mcwc", version, about = "Permutation-aligned predictive codec for layered checkpoints")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compress a checkpoint container into a bitstream.
    Encode(EncodeArgs),
    /// Reconstruct a checkpoint container from a bitstream.
    Decode(DecodeArgs),
    /// Print the header and the rate breakdown of a bitstream.
    Inspect(InspectArgs),
    /// Cross-layer predictability before and after alignment.
    Diagnose(DiagnoseArgs),
    /// Deployments needed to recover the extra encode cost.
    Breakeven(BreakevenArgs),
    /// Run the embedded property checks.
    Selftest(SelftestArgs),
    /// Print the default configuration document.
    Config(ConfigArgs),
}

#[derive(Args, Debug)]
struct CodecArgs {
    /// TOML configuration document.
    #[arg(short = 'c', long = "config")]
    config: Option<PathBuf>,
    /// Block types as JSON (replaces those in the config).
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    keyframe_interval: Option<u32>,
    #[arg(long)]
    no_alignment: bool,
    #[arg(long)]
    random_alignment: bool,
    #[arg(long)]
    no_predictor: bool,
    /// Fixed-length codes and permutations instead of entropy coding.
    #[arg(long)]
    fixed_length: bool,
    #[arg(long)]
    residual_energy_alignment: bool,
    /// Activation sidecar container with `act.<type id>` tensors of shape [B, d].
    #[arg(long)]
    activations: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EncodeArgs {
    input: PathBuf,
    /// Output bitstream; defaults to the input with extension `mcwc`.
    #[arg(short = 'o', long = "output")]
    output: Option<PathBuf>,
    #[command(flatten)]
    codec: CodecArgs,
    /// Rate weight; several values (comma separated or repeated) run a sweep.
    #[arg(long = "lambda", value_delimiter = ',')]
    lambda: Vec<f64>,
    /// Bits/param budget used to pick the sweep point.
    #[arg(long)]
    target_bpp: Option<f64>,
    /// Also write the rate breakdown as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DecodeArgs {
    input: PathBuf,
    /// Output container; defaults to the input with extension `ckpt`.
    #[arg(short = 'o', long = "output")]
    output: Option<PathBuf>,
    /// Decode threads; segments between keyframes decode independently.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args, Debug)]
struct InspectArgs {
    input: PathBuf,
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ReportFormat {
    Csv,
    Json,
}

#[derive(Args, Debug)]
struct DiagnoseArgs {
    input: PathBuf,
    #[command(flatten)]
    codec: CodecArgs,
    #[arg(long, value_enum, default_value = "csv")]
    format: ReportFormat,
    /// Report destination; stdout when absent.
    #[arg(short = 'o', long = "output")]
    output: Option<PathBuf>,
    /// Write the residual magnitude histogram as CSV.
    #[arg(long)]
    histogram: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BreakevenArgs {
    /// TOML document whose `[scenario]` table is used.
    #[arg(short = 'c', long = "config")]
    config: Option<PathBuf>,
    #[arg(long)]
    baseline_gb: Option<f64>,
    #[arg(long)]
    compressed_gb: Option<f64>,
    #[arg(long)]
    bandwidth_gb_s: Option<f64>,
    #[arg(long)]
    decode_s: Option<f64>,
    #[arg(long)]
    materialize_s: Option<f64>,
    #[arg(long)]
    encode_s: Option<f64>,
    /// With --bpp, derive the compressed size from a parameter count.
    #[arg(long, requires = "bpp")]
    params: Option<f64>,
    #[arg(long, requires = "params")]
    bpp: Option<f64>,
}

#[derive(Args, Debug)]
struct SelftestArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct ConfigArgs {
    #[arg(short = 'o', long = "output")]
    output: Option<PathBuf>,
}

fn init_logging() {
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("MCWC_LOG", "warn")).try_init();
}

/// Parse `argv` (program name first), run the subcommand and return the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Encode(a) => encode(a),
        Command::Decode(a) => decode(a),
        Command::Inspect(a) => inspect(a),
        Command::Diagnose(a) => diagnose(a),
        Command::Breakeven(a) => breakeven(a),
        Command::Selftest(a) => selftest::run(a.seed),
        Command::Config(a) => print_config(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            match &f {
                Failure::Usage(m) => eprintln!("mcwc: usage error: {m}"),
                Failure::Data(m) => eprintln!("mcwc: error: {m}"),
            }
            f.code()
        }
    }
}

fn require_file(p: &Path) -> Outcome {
    if !p.is_file() {
        return Err(Failure::Usage(format!("input file {} does not exist", p.display())));
    }
    Ok(())
}

fn require_parent(p: &Path) -> Outcome {
    match p.parent() {
        Some(d) if !d.as_os_str().is_empty() && !d.is_dir() => {
            Err(Failure::Usage(format!("output directory {} does not exist", d.display())))
        }
        _ => Ok(()),
    }
}

/// Write through a temporary file in the destination directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

fn set_workers(n: Option<usize>) -> Outcome {
    if let Some(n) = n {
        if n == 0 {
            return Err(Failure::Usage("--workers must be at least 1".into()));
        }
        // Fails only if the global pool already exists (repeated `run` in one process).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn load_document(a: &CodecArgs) -> Result<Document, Failure> {
    let mut doc = match &a.config {
        Some(p) => Document::load(p).map_err(Failure::Usage)?,
        None => Document::default(),
    };
    let c = &mut doc.codec;
    if let Some(p) = &a.spec {
        c.block_types = load_block_spec(p).map_err(Failure::Usage)?;
    }
    if let Some(s) = a.seed {
        c.seed = s;
    }
    if let Some(k) = a.keyframe_interval {
        c.keyframe_interval = k;
    }
    c.ablation.no_alignment |= a.no_alignment;
    c.ablation.random_alignment |= a.random_alignment;
    c.ablation.no_predictor |= a.no_predictor;
    c.ablation.fixed_length_codes |= a.fixed_length;
    c.ablation.fixed_length_perms |= a.fixed_length;
    c.ablation.residual_energy_alignment |= a.residual_energy_alignment;
    c.validate()?;
    if c.block_types.is_empty() {
        warn!("no block types configured; every tensor is coded as a standalone keyframe");
    }
    Ok(doc)
}

fn load_activations(a: &CodecArgs, doc: &Document) -> Result<Option<ActivationSet>, Failure> {
    match &a.activations {
        None => Ok(None),
        Some(p) => {
            require_file(p)?;
            let side = load_checkpoint(p)?;
            Ok(Some(ActivationSet::from_checkpoint(&side, &doc.codec.block_types)?))
        }
    }
}

fn encode(a: EncodeArgs) -> Outcome {
    require_file(&a.input)?;
    let output = a.output.clone().unwrap_or_else(|| a.input.with_extension("mcwc"));
    require_parent(&output)?;
    if let Some(r) = &a.report {
        require_parent(r)?;
    }
    let mut doc = load_document(&a.codec)?;
    set_workers(a.codec.workers)?;
    let lambdas = if a.lambda.is_empty() { doc.sweep.lambdas.clone() } else { a.lambda.clone() };
    let target = a.target_bpp.or(doc.sweep.target_bpp);
    if lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
        return Err(Failure::Usage("λ values must be finite and non-negative".into()));
    }
    let ckpt = load_checkpoint(&a.input)?;
    let acts = load_activations(&a.codec, &doc)?;
    let start = Instant::now();
    let out: EncodeOutput = if lambdas.len() > 1 {
        let (best, points) = encode_sweep(&ckpt, &doc.codec, &lambdas, target, acts.as_ref())?;
        for p in &points {
            println!("lambda {:<10} bits/param {:>9.4}  mse {:.6e}", p.lambda, p.bits_per_param, p.mse);
        }
        best
    } else {
        if let Some(&l) = lambdas.first() {
            doc.codec.lambda = l;
        }
        encode_checkpoint(&ckpt, &doc.codec, acts.as_ref())?
    };
    info!("encoded in {:.3} s", start.elapsed().as_secs_f64());
    let rb = rate_report(&out.bytes)?;
    write_atomic(&output, &out.bytes)?;
    if let Some(r) = &a.report {
        let json = serde_json::json!({ "rate": rb, "mse": out.stats.mse, "clips": out.stats.clip_count });
        write_atomic(r, serde_json::to_string_pretty(&json).expect("json").as_bytes())?;
    }
    println!("wrote {} ({} bytes)", output.display(), out.bytes.len());
    print!("{}", rb.render());
    println!("{:<24}{:>16.6e}", "mse", out.stats.mse);
    Ok(())
}

fn decode(a: DecodeArgs) -> Outcome {
    require_file(&a.input)?;
    let output = a.output.clone().unwrap_or_else(|| a.input.with_extension("ckpt"));
    require_parent(&output)?;
    let workers = match a.workers {
        Some(0) => return Err(Failure::Usage("--workers must be at least 1".into())),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let bytes = std::fs::read(&a.input)?;
    let start = Instant::now();
    let ckpt = decode_segments_parallel(&bytes, workers)?;
    let elapsed = start.elapsed().as_secs_f64();
    write_atomic(&output, &to_bytes(&ckpt)?)?;
    println!("wrote {} ({} layers, {} parameters)", output.display(), ckpt.num_layers(), param_count(&ckpt));
    println!("decode time: {elapsed:.6} s ({workers} workers)");
    Ok(())
}

fn inspect(a: InspectArgs) -> Outcome {
    require_file(&a.input)?;
    let bytes = std::fs::read(&a.input)?;
    let s = Stream::open(&bytes)?;
    let rb = rate_report(&bytes)?;
    let h = &s.header;
    if a.json {
        let types: Vec<_> = h.block_types.iter().map(|t| serde_json::json!({"type_id": t.type_id, "name": t.name})).collect();
        let json = serde_json::json!({
            "version": h.version,
            "num_layers": h.num_layers,
            "keyframe_interval": h.keyframe_interval,
            "arch_id": h.arch_id,
            "flags": h.flags,
            "record_count": h.record_count,
            "block_types": types,
            "predictor": h.theta.is_some(),
            "entropy_model": h.psi.is_some(),
            "rate": rb,
        });
        println!("{}", serde_json::to_string_pretty(&json).expect("json"));
        return Ok(());
    }
    println!("version            {}", h.version);
    println!("layers             {}", h.num_layers);
    println!("keyframe interval  {}", h.keyframe_interval);
    println!("arch id            {}", h.arch_id);
    println!("flags              {:#04x}", h.flags);
    println!("records            {}", h.record_count);
    println!("parameters         {}", s.plan.param_count());
    for t in &h.block_types {
        let members: Vec<String> = t.members.iter().map(|m| format!("{}@{}", m.tensor, m.axis)).collect();
        println!("block type {:<6}  {} [{}]", t.type_id, t.name, members.join(", "));
    }
    println!("predictor          {}", if h.theta.is_some() { "present" } else { "absent" });
    println!("entropy model      {}", if h.psi.is_some() { "present" } else { "absent (fixed-length codes)" });
    println!();
    print!("{}", rb.render());
    Ok(())
}

fn diagnose(a: DiagnoseArgs) -> Outcome {
    require_file(&a.input)?;
    for p in a.output.iter().chain(&a.histogram) {
        require_parent(p)?;
    }
    let mut doc = load_document(&a.codec)?;
    set_workers(a.codec.workers)?;
    let ckpt = load_checkpoint(&a.input)?;
    if a.codec.keyframe_interval.is_none() {
        // cover every adjacent pair
        doc.codec.keyframe_interval = ckpt.num_layers().max(1) as u32;
    }
    let acts = load_activations(&a.codec, &doc)?;
    let rep = predictability_report(&ckpt, &doc.codec, acts.as_ref(), &octave_edges(-16, 4))?;
    let text = match a.format {
        ReportFormat::Csv => rep.to_csv(),
        ReportFormat::Json => rep.to_json() + "\n",
    };
    match &a.output {
        Some(p) => write_atomic(p, text.as_bytes())?,
        None => print!("{text}"),
    }
    if let Some(p) = &a.histogram {
        write_atomic(p, rep.histogram.to_csv().as_bytes())?;
    }
    Ok(())
}

fn breakeven(a: BreakevenArgs) -> Outcome {
    let mut s = match &a.config {
        Some(p) => Document::load(p).map_err(Failure::Usage)?.scenario,
        None => Document::default().scenario,
    };
    let set = |dst: &mut f64, v: Option<f64>| {
        if let Some(v) = v {
            *dst = v;
        }
    };
    set(&mut s.baseline_gb, a.baseline_gb);
    set(&mut s.compressed_gb, a.compressed_gb);
    set(&mut s.bandwidth_gb_s, a.bandwidth_gb_s);
    set(&mut s.decode_s, a.decode_s);
    set(&mut s.materialize_s, a.materialize_s);
    set(&mut s.extra_encode_s, a.encode_s);
    if let (Some(n), Some(r)) = (a.params, a.bpp) {
        if !(n >= 0.0 && r >= 0.0) {
            return Err(Failure::Usage("--params and --bpp must be nonnegative".into()));
        }
        s.compressed_gb = bitstream_size_bytes(n, r) / 1e9;
    }
    s.validate()?;
    println!("baseline size      {:.4} GB", s.baseline_gb);
    println!("compressed size    {:.4} GB", s.compressed_gb);
    println!("load saving        {:.4} s per deployment", s.load_saving_s());
    match break_even(&s) {
        Ok(n) => println!("break-even         {n} deployments"),
        Err(Error::NoBreakEven(_)) => println!("break-even         never"),
        Err(e) => return Err(e.into()),
    }
    Ok(())
}

fn print_config(a: ConfigArgs) -> Outcome {
    let text = Document::default().to_toml();
    match &a.output {
        Some(p) => {
            require_parent(p)?;
            write_atomic(p, text.as_bytes())?;
        }
        None => print!("{text}"),
    }
    Ok(())
}
