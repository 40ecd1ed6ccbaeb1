//! Command-line front end.
//!
//! Configs are JSON files with unknown keys rejected; a bad key is reported
//! with its path. Outputs are written atomically and carry provenance (tool
//! version, config digest, effective seed). Exit codes: 0 success, 1 run
//! failure, 2 config or argument error, 3 file or format error.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use tencomp::datagen::{generate, TaskSpec};
use tencomp::ensemble::{save_ensemble, train_ensemble, EnsembleSpec};
use tencomp::harness::{
    complete, cross_dataset_completion, lambda_sensitivity, rank_scan_report, run_benchmark, sparsity_sweep,
    timing_report, CrossDatasetSpec, ExperimentReport, ExperimentSpec, LambdaSpec, MethodSpec, RankScanSpec,
};
use tencomp::io::{convert_csv, convert_json, read_tensor, write_atomic, write_tensor, SptnFile, TensorData};
use tencomp::metrics::{all_indices, mae, normalized_error, rmse};
use tencomp::models::{encode_checkpoint, Checkpoint, ModelInit};
use tencomp::tensor::sample_observed;
use tencomp::training::{fit, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "tencomp", version, about = "Sparse tensor completion for combinatorial search spaces")]
pub struct Cli {
    /// Overrides the seed given in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Only log errors.
    #[arg(long, short, global = true)]
    quiet: bool,
    /// Print the command summary as JSON.
    #[arg(long, global = true)]
    json: bool,
    /// Worker threads for parallel runs.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a benchmark tensor from a generator spec.
    Generate(GenerateArgs),
    /// Draw an observed subset of a dense tensor.
    Sample(SampleArgs),
    /// Complete an observed tensor with one method.
    Complete(CompleteArgs),
    /// Complete an observed tensor with an ensemble and optionally save it.
    Ensemble(EnsembleArgs),
    /// Score a prediction against the ground truth.
    Evaluate(EvaluateArgs),
    /// Methods × repetitions at fixed observed fractions.
    Benchmark(ExperimentArgs),
    /// Methods × observed-fraction grid.
    Sweep(ExperimentArgs),
    /// Smoothness weight sensitivity.
    Lambda(ExperimentArgs),
    /// Decomposition error versus rank on a full tensor.
    Rankscan(ExperimentArgs),
    /// Joint completion of stacked tensors versus single-tensor completion.
    Crossdataset(ExperimentArgs),
    /// Train and inference time per method.
    Timing(ExperimentArgs),
    /// Convert a JSON or CSV dump to the tensor format.
    Convert(ConvertArgs),
}

#[derive(Debug, Args)]
struct GenerateArgs {
    /// Generator spec (JSON).
    #[arg(long)]
    spec: PathBuf,
    /// Output tensor; metadata goes to `<out>.meta.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    fraction: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CompleteArgs {
    /// Observed (sparse) tensor.
    #[arg(long)]
    input: PathBuf,
    /// Method config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Completed dense tensor.
    #[arg(long)]
    out: PathBuf,
    /// Save the fitted model.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Save the per-epoch loss trace as CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EnsembleArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Directory for base checkpoints, aggregator and manifest.
    #[arg(long)]
    save_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    prediction: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    /// Score only the entries not observed here.
    #[arg(long)]
    observed: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    /// Per-run CSV; aggregates go next to it with a `.json` extension.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ConvertArgs {
    /// `.json` or `.csv` dump.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Mode sizes for CSV input, e.g. `4,5,6`.
    #[arg(long, value_delimiter = ',')]
    shape: Option<Vec<usize>>,
    #[arg(long)]
    name: Option<String>,
}

/// Config of `complete`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CompleteConfig {
    method: MethodSpec,
    #[serde(default)]
    train: TrainConfig,
    #[serde(default)]
    seed: u64,
}

/// Config of `ensemble`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnsembleConfig {
    ensemble: EnsembleSpec,
    #[serde(default)]
    train: TrainConfig,
}

#[derive(Debug)]
pub enum CliError {
    Config { message: String, path: Option<String> },
    Io(String),
    Run(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Run(_) => 1,
            CliError::Config { .. } => 2,
            CliError::Io(_) => 3,
        }
    }

    fn to_json(&self) -> Value {
        let (kind, message, path) = match self {
            CliError::Config { message, path } => ("config", message, path.clone()),
            CliError::Io(m) => ("io", m, None),
            CliError::Run(m) => ("run", m, None),
        };
        json!({ "error": { "kind": kind, "message": message, "path": path } })
    }
}

impl From<tencomp::Error> for CliError {
    fn from(e: tencomp::Error) -> Self {
        use tencomp::Error as E;
        match e {
            E::Io(_) | E::Format(_) => CliError::Io(e.to_string()),
            E::Json(_) => CliError::Config {
                message: e.to_string(),
                path: None,
            },
            E::InvalidArgument(_) | E::InvalidRank(_) | E::TypeMismatch(_) => CliError::Config {
                message: e.to_string(),
                path: None,
            },
            other => CliError::Run(other.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

struct LoadedConfig<T> {
    value: T,
    digest: String,
    dir: Option<PathBuf>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn load_config<T: DeserializeOwned>(path: &Path) -> CliResult<LoadedConfig<T>> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let text = std::str::from_utf8(&bytes).map_err(|e| CliError::Config {
        message: format!("{}: {e}", path.display()),
        path: None,
    })?;
    let mut de = serde_json::Deserializer::from_str(text);
    let value: T = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let at = locate_error(text, e.path(), &e.inner().to_string());
        CliError::Config {
            message: format!("{}: {} at `{at}`", path.display(), e.inner()),
            path: Some(at),
        }
    })?;
    de.end().map_err(|e| CliError::Config {
        message: format!("{}: {e}", path.display()),
        path: None,
    })?;
    Ok(LoadedConfig {
        value,
        digest: sha256_hex(&bytes),
        dir: path.parent().map(Path::to_path_buf),
    })
}

/// The path of the offending key. Tagged enums buffer their content, which
/// hides the tail of the path from the deserializer, so the reported path is
/// extended using the field the message names or the unique value it quotes.
fn locate_error(text: &str, path: &serde_path_to_error::Path, message: &str) -> String {
    use serde_path_to_error::Segment;
    let mut segments: Vec<String> = Vec::new();
    let root: Option<Value> = serde_json::from_str(text).ok();
    let mut node = root.as_ref();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => {
                segments.push(format!("[{index}]"));
                node = node.and_then(|n| n.get(index));
            }
            Segment::Map { key } | Segment::Enum { variant: key } => {
                segments.push(key.clone());
                node = node.and_then(|n| n.get(key));
            }
            Segment::Unknown => node = None,
        }
    }
    let quoted = |prefix: &str| {
        message.find(prefix).and_then(|i| {
            let rest = &message[i + prefix.len()..];
            rest.find('`').map(|j| rest[..j].to_string())
        })
    };
    if let Some(field) = quoted("missing field `").or_else(|| quoted("unknown field `")) {
        segments.push(field);
    } else if let (Some(node), Some(unexpected)) = (node, unexpected_of(message)) {
        let mut hits = Vec::new();
        find_leaves(node, &mut Vec::new(), unexpected, &mut hits);
        if let [only] = hits.as_slice() {
            segments.extend(only.iter().cloned());
        }
    }
    join_path(&segments)
}

/// The value description in an `invalid type/value: X, expected Y` message.
fn unexpected_of(message: &str) -> Option<&str> {
    let start = ["invalid type: ", "invalid value: "].iter().find_map(|p| message.find(p).map(|i| i + p.len()))?;
    let rest = &message[start..];
    rest.find(", expected").map(|end| &rest[..end])
}

/// serde's description of a JSON value in type errors.
fn describe(v: &Value) -> String {
    match v {
        Value::Null => "null".into(),
        Value::Bool(b) => format!("boolean `{b}`"),
        Value::Number(n) if n.is_f64() => format!("floating point `{}`", n.as_f64().unwrap_or_default()),
        Value::Number(n) => format!("integer `{n}`"),
        Value::String(s) => format!("string {s:?}"),
        Value::Array(_) => "sequence".into(),
        Value::Object(_) => "map".into(),
    }
}

fn find_leaves(v: &Value, at: &mut Vec<String>, unexpected: &str, hits: &mut Vec<Vec<String>>) {
    if !at.is_empty() && describe(v) == unexpected {
        hits.push(at.clone());
    }
    match v {
        Value::Array(items) => {
            for (i, item) in items.iter().enumerate() {
                at.push(format!("[{i}]"));
                find_leaves(item, at, unexpected, hits);
                at.pop();
            }
        }
        Value::Object(map) => {
            for (k, item) in map {
                at.push(k.clone());
                find_leaves(item, at, unexpected, hits);
                at.pop();
            }
        }
        _ => {}
    }
}

fn join_path(segments: &[String]) -> String {
    if segments.is_empty() {
        return ".".into();
    }
    let mut out = String::new();
    for s in segments {
        if !out.is_empty() && !s.starts_with('[') {
            out.push('.');
        }
        out.push_str(s);
    }
    out
}

fn provenance(command: &str, digest: &str, seed: u64) -> Value {
    json!({
        "tool": "tencomp",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "config_sha256": digest,
        "seed": seed,
    })
}

fn read(path: &Path) -> CliResult<SptnFile> {
    read_tensor(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

struct Output {
    json: bool,
}

impl Output {
    fn emit(&self, summary: Value, text: String) {
        if self.json {
            println!("{summary}");
        } else {
            println!("{text}");
        }
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    let level = if cli.quiet { "error" } else { "info" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_target(false)
        .try_init();
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads.max(1)).build_global() {
        log::warn!("thread pool already initialised: {e}");
    }
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}

fn run(cli: &Cli) -> CliResult<()> {
    let out = Output { json: cli.json };
    match &cli.command {
        Command::Generate(a) => cmd_generate(cli, a, &out),
        Command::Sample(a) => cmd_sample(cli, a, &out),
        Command::Complete(a) => cmd_complete(cli, a, &out),
        Command::Ensemble(a) => cmd_ensemble(cli, a, &out),
        Command::Evaluate(a) => cmd_evaluate(a, &out),
        Command::Benchmark(a) => cmd_experiment(cli, "benchmark", a, &out, |s: &ExperimentSpec, d| {
            run_benchmark(s, d)
        }),
        Command::Sweep(a) => cmd_experiment(cli, "sweep", a, &out, |s: &ExperimentSpec, d| sparsity_sweep(s, d)),
        Command::Timing(a) => cmd_experiment(cli, "timing", a, &out, |s: &ExperimentSpec, d| timing_report(s, d)),
        Command::Lambda(a) => cmd_experiment(cli, "lambda", a, &out, |s: &LambdaSpec, d| lambda_sensitivity(s, d)),
        Command::Rankscan(a) => cmd_experiment(cli, "rankscan", a, &out, |s: &RankScanSpec, d| {
            rank_scan_report(s, d)
        }),
        Command::Crossdataset(a) => cmd_experiment(cli, "crossdataset", a, &out, |s: &CrossDatasetSpec, d| {
            cross_dataset_completion(s, d)
        }),
        Command::Convert(a) => cmd_convert(a, &out),
    }
}

fn cmd_generate(cli: &Cli, a: &GenerateArgs, out: &Output) -> CliResult<()> {
    let LoadedConfig { mut value, digest, .. } = load_config::<TaskSpec>(&a.spec)?;
    if let Some(s) = cli.seed {
        value.set_seed(s);
    }
    let generated = generate(&value)?;
    let prov = provenance("generate", &digest, value.seed());
    let file = SptnFile {
        name: stem(&a.out),
        provenance: Some(prov.clone()),
        tensor: TensorData::Dense(generated.tensor.clone()),
    };
    write_tensor(&a.out, &file)?;
    let meta_path = PathBuf::from(format!("{}.meta.json", a.out.display()));
    let mut meta = serde_json::to_value(&generated.metadata).map_err(tencomp::Error::from)?;
    meta["provenance"] = prov;
    let mut text = serde_json::to_string_pretty(&meta).map_err(tencomp::Error::from)?;
    text.push('\n');
    write_atomic(&meta_path, text.as_bytes())?;
    let shape = generated.tensor.shape().dims().to_vec();
    out.emit(
        json!({ "out": a.out, "metadata": meta_path, "shape": shape, "flags": generated.metadata.flags.len() }),
        format!("wrote {} {:?} and {}", a.out.display(), shape, meta_path.display()),
    );
    Ok(())
}

fn cmd_sample(cli: &Cli, a: &SampleArgs, out: &Output) -> CliResult<()> {
    let file = read(&a.input)?;
    let TensorData::Dense(dense) = &file.tensor else {
        return Err(CliError::Config {
            message: format!("{} is already sparse", a.input.display()),
            path: None,
        });
    };
    let seed = cli.seed.unwrap_or(0);
    let observed = sample_observed(dense, a.fraction, seed)?;
    let digest = sha256_hex(format!("sample {} {}", file.name, a.fraction).as_bytes());
    let n = observed.len();
    write_tensor(
        &a.out,
        &SptnFile {
            name: file.name.clone(),
            provenance: Some(provenance("sample", &digest, seed)),
            tensor: TensorData::Sparse(observed),
        },
    )?;
    out.emit(
        json!({ "out": a.out, "observed": n, "seed": seed }),
        format!("wrote {} observed entries to {}", n, a.out.display()),
    );
    Ok(())
}

fn observed_input(path: &Path) -> CliResult<(SptnFile, tencomp::tensor::SparseTensor)> {
    let file = read(path)?;
    let observed = file.tensor.to_sparse();
    Ok((file, observed))
}

fn cmd_complete(cli: &Cli, a: &CompleteArgs, out: &Output) -> CliResult<()> {
    let cfg = load_config::<CompleteConfig>(&a.config)?;
    let seed = cli.seed.unwrap_or(cfg.value.seed);
    let (file, observed) = observed_input(&a.input)?;
    let method = &cfg.value.method;
    let train = &cfg.value.train;
    let (prediction, stop_reason) = match method {
        MethodSpec::Naive | MethodSpec::Ensemble { .. } => {
            if a.checkpoint.is_some() || a.trace.is_some() {
                log::warn!("--checkpoint and --trace only apply to single-model methods");
            }
            let c = complete(method, &observed, seed, train)?;
            (c.prediction, c.stop_reason)
        }
        _ => {
            let kind = method_kind(method);
            let mut tc = train.clone().with_seed(seed);
            if let MethodSpec::CpdS { smoothness, .. } = method {
                tc.regularizer = Some(smoothness.clone());
            }
            let trace = fit(&kind, &observed, &ModelInit::new(seed), &tc)?;
            if let Some(p) = &a.checkpoint {
                let text = encode_checkpoint(&Checkpoint {
                    seed,
                    model: trace.model.clone(),
                });
                write_atomic(p, text.as_bytes())?;
            }
            if let Some(p) = &a.trace {
                write_atomic(p, trace.to_csv().as_bytes())?;
            }
            (trace.model.reconstruct(observed.shape())?, trace.stop_reason.as_str().to_string())
        }
    };
    write_tensor(
        &a.out,
        &SptnFile {
            name: file.name,
            provenance: Some(provenance("complete", &cfg.digest, seed)),
            tensor: TensorData::Dense(prediction),
        },
    )?;
    out.emit(
        json!({ "out": a.out, "method": method.label(), "seed": seed, "stop_reason": stop_reason }),
        format!("{} ({stop_reason}) -> {}", method.label(), a.out.display()),
    );
    Ok(())
}

fn method_kind(method: &MethodSpec) -> tencomp::models::ModelKind {
    use tencomp::models::ModelKind;
    match method {
        MethodSpec::Cpd { rank } | MethodSpec::CpdS { rank, .. } => ModelKind::cp(*rank),
        MethodSpec::Tucker { ranks } => ModelKind::Tucker { ranks: ranks.clone() },
        MethodSpec::TensorTrain { ranks } => ModelKind::TensorTrain { ranks: ranks.clone() },
        MethodSpec::Neural { rank, channels, hidden } => ModelKind::Neural {
            rank: *rank,
            channels: *channels,
            hidden: *hidden,
        },
        MethodSpec::Naive | MethodSpec::Ensemble { .. } => unreachable!("handled by the harness"),
    }
}

fn cmd_ensemble(cli: &Cli, a: &EnsembleArgs, out: &Output) -> CliResult<()> {
    let cfg = load_config::<EnsembleConfig>(&a.config)?;
    let mut spec = cfg.value.ensemble.clone();
    if let Some(s) = cli.seed {
        spec.seed = s;
    }
    let (file, observed) = observed_input(&a.input)?;
    let model = train_ensemble(&observed, &spec, &cfg.value.train)?;
    if let Some(dir) = &a.save_dir {
        save_ensemble(&model, dir)?;
    }
    let prediction = model.reconstruct()?;
    write_tensor(
        &a.out,
        &SptnFile {
            name: file.name,
            provenance: Some(provenance("ensemble", &cfg.digest, spec.seed)),
            tensor: TensorData::Dense(prediction),
        },
    )?;
    let active = model.active_bases().count();
    out.emit(
        json!({ "out": a.out, "bases": model.bases().len(), "active": active, "seed": spec.seed }),
        format!("{} of {} bases active -> {}", active, model.bases().len(), a.out.display()),
    );
    Ok(())
}

fn dense_of(path: &Path) -> CliResult<tencomp::tensor::DenseTensor> {
    match read(path)?.tensor {
        TensorData::Dense(d) => Ok(d),
        TensorData::Sparse(_) => Err(CliError::Config {
            message: format!("{} must be dense", path.display()),
            path: None,
        }),
    }
}

fn cmd_evaluate(a: &EvaluateArgs, out: &Output) -> CliResult<()> {
    let pred = dense_of(&a.prediction)?;
    let truth = dense_of(&a.truth)?;
    let over = match &a.observed {
        Some(p) => read(p)?.tensor.to_sparse().unobserved_flat(),
        None => all_indices(truth.shape().numel()),
    };
    let (m, r, n) = (
        mae(&pred, &truth, &over)?,
        rmse(&pred, &truth, &over)?,
        normalized_error(&pred, &truth, &over)?,
    );
    out.emit(
        json!({ "mae": m, "rmse": r, "nerr": n, "entries": over.len() }),
        format!("mae {m:.6e}  rmse {r:.6e}  nerr {n:.6e}  over {} entries", over.len()),
    );
    Ok(())
}

/// Configs whose seed the global `--seed` flag replaces.
trait Seeded {
    fn seed_mut(&mut self) -> &mut u64;
}

impl Seeded for ExperimentSpec {
    fn seed_mut(&mut self) -> &mut u64 {
        &mut self.seed
    }
}

impl Seeded for LambdaSpec {
    fn seed_mut(&mut self) -> &mut u64 {
        &mut self.seed
    }
}

impl Seeded for RankScanSpec {
    fn seed_mut(&mut self) -> &mut u64 {
        &mut self.decompose.train.seed
    }
}

impl Seeded for CrossDatasetSpec {
    fn seed_mut(&mut self) -> &mut u64 {
        &mut self.seed
    }
}

fn cmd_experiment<T, F>(cli: &Cli, name: &str, a: &ExperimentArgs, out: &Output, run: F) -> CliResult<()>
where
    T: DeserializeOwned + Seeded,
    F: FnOnce(&T, Option<&Path>) -> tencomp::Result<ExperimentReport>,
{
    let mut cfg = load_config::<T>(&a.config)?;
    if let Some(s) = cli.seed {
        *cfg.value.seed_mut() = s;
    }
    let seed = *cfg.value.seed_mut();
    let report = run(&cfg.value, cfg.dir.as_deref())?;
    let prov = provenance(name, &cfg.digest, seed);
    let json_path = report.write(&a.out, Some(&prov))?;
    let failures = report.rows.iter().filter(|r| r.failed()).count();
    let mut text = format!(
        "{} runs ({failures} failed) -> {} and {}",
        report.rows.len(),
        a.out.display(),
        json_path.display()
    );
    for agg in report.aggregates() {
        let mae = agg.mae.map(|s| format!("{:.4e} ± {:.1e}", s.mean, s.std)).unwrap_or_else(|| "-".into());
        text.push_str(&format!("\n  {:<28} {:>8} f={:<6} mae {mae}", agg.method, agg.rank, agg.fraction));
    }
    out.emit(
        json!({ "csv": a.out, "aggregates": json_path, "runs": report.rows.len(), "failures": failures }),
        text,
    );
    Ok(())
}

fn cmd_convert(a: &ConvertArgs, out: &Output) -> CliResult<()> {
    let text = std::fs::read_to_string(&a.input).map_err(|e| CliError::Io(format!("{}: {e}", a.input.display())))?;
    let ext = a.input.extension().and_then(|e| e.to_str()).unwrap_or_default().to_ascii_lowercase();
    let mut file = match ext.as_str() {
        "json" => convert_json(&text),
        "csv" => convert_csv(&text, a.shape.clone()),
        other => {
            return Err(CliError::Config {
                message: format!("unsupported input extension {other:?}; expected json or csv"),
                path: None,
            })
        }
    }
    .map_err(|e| match e {
        tencomp::Error::Json(_) => CliError::Io(format!("{}: {e}", a.input.display())),
        other => other.into(),
    })?;
    if let Some(n) = &a.name {
        file.name = n.clone();
    } else if file.name.is_empty() {
        file.name = stem(&a.input);
    }
    write_tensor(&a.out, &file)?;
    out.emit(
        json!({ "out": a.out, "kind": file.tensor.kind(), "shape": file.tensor.shape().dims() }),
        format!("wrote {} {:?}", a.out.display(), file.tensor.shape().dims()),
    );
    Ok(())
}
