use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use unclip::aspade::{declip_with_mask, AspadeConfig};
use unclip::corpus::{
    split, synth_eval_grid, synth_gain_grid, synth_target_sdr, synth_tones, DatasetManifest, EVAL_GRID_DB,
    SPLIT_RATIOS, TARGET_SDR_RANGE_DB,
};
use unclip::effects::{apply, DistortionSpec, EffectKind, DEFAULT_COLOUR, DEFAULT_THRESHOLD};
use unclip::harness::{
    measure_rtf, records_csv, run_eval, study_csv, summary_csv, superposition_study, EvalOptions, Method,
    StudyConfig,
};
use unclip::irm::apply_oracle;
use unclip::neural::{infer, load_model, save_model, train_with, ModelParams, ModelSpec, TrainConfig};
use unclip::reliability::{detect, detect_auto};
use unclip::stft::StftConfig;
use unclip::wav::{read_wav, write_wav, WavFormat};
use unclip::{Signal, CANONICAL_RATE};

/// Invalid combination of arguments; exits with status 2.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(Usage(msg.into()).into())
}

#[derive(Parser)]
#[command(name = "unclip", version, about = "Distortion synthesis, declipping and evaluation")]
struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Working sample rate for corpus synthesis.
    #[arg(long, global = true, default_value_t = CANONICAL_RATE)]
    sample_rate: u32,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Apply a distortion effect to a WAV file.
    Fx(FxArgs),
    /// Restore a clipped or distorted WAV file.
    Declip(DeclipArgs),
    /// Build and split datasets.
    #[command(subcommand)]
    Corpus(CorpusCommand),
    /// Train the neural declipper.
    Train(TrainArgs),
    /// Score restoration methods on a manifest's test split.
    Eval(EvalArgs),
    /// Experiments.
    #[command(subcommand)]
    Study(StudyCommand),
    /// Timing benchmarks.
    #[command(subcommand)]
    Bench(BenchCommand),
}

#[derive(Clone, Copy, ValueEnum)]
enum EffectArg {
    Hardclip,
    Tanh,
    Overdrive,
}

impl From<EffectArg> for EffectKind {
    fn from(e: EffectArg) -> Self {
        match e {
            EffectArg::Hardclip => EffectKind::HardClip,
            EffectArg::Tanh => EffectKind::TanhClip,
            EffectArg::Overdrive => EffectKind::SoxOverdrive,
        }
    }
}

#[derive(Args)]
struct EffectOpts {
    #[arg(long, value_enum)]
    effect: EffectArg,
    /// Wet weight; 1 keeps only the shaped signal.
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    /// Overdrive pre-shaper bias.
    #[arg(long, default_value_t = DEFAULT_COLOUR)]
    colour: f64,
}

impl EffectOpts {
    fn spec(&self, gain_db: f64) -> DistortionSpec {
        let mut spec = DistortionSpec::new(self.effect.into(), gain_db)
            .with_threshold(self.threshold)
            .with_wet_weight(self.alpha);
        spec.colour = self.colour;
        spec
    }
}

#[derive(Args)]
struct FxArgs {
    #[command(flatten)]
    effect: EffectOpts,
    #[arg(long, allow_hyphen_values = true)]
    gain_db: f64,
    input: PathBuf,
    output: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Aspade,
    Irm,
    Neural,
}

#[derive(Args)]
struct RestoreOpts {
    #[arg(long, value_enum)]
    method: MethodArg,
    /// Trained model file (neural).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Clean reference (irm).
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Clipping threshold (aspade); detected from the signal when absent.
    #[arg(long)]
    threshold: Option<f64>,
    /// Leave frames without clipped samples unsolved (aspade).
    #[arg(long)]
    skip_reliable_frames: bool,
}

#[derive(Args)]
struct DeclipArgs {
    #[command(flatten)]
    restore: RestoreOpts,
    /// JSON report path (default: OUTPUT with `.json` appended).
    #[arg(long)]
    report: Option<PathBuf>,
    input: PathBuf,
    output: PathBuf,
}

#[derive(Subcommand)]
enum CorpusCommand {
    /// Degrade every clip of a clean directory.
    Synth(SynthArgs),
    /// Assign train/valid/test splits by clean clip.
    Split(SplitArgs),
    /// Generate synthetic clean tones.
    Tones(TonesArgs),
    /// Clip every clean clip at each target input SDR of a fixed grid.
    EvalGrid(EvalGridArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthMode {
    /// Five seeded gains per clip.
    GainGrid,
    /// One hard-clip threshold per clip hitting a drawn input SDR.
    TargetSdr,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    clean_dir: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "gain-grid")]
    mode: SynthMode,
    #[arg(long, value_enum, default_value = "hardclip")]
    effect: EffectArg,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    #[arg(long, default_value_t = DEFAULT_COLOUR)]
    colour: f64,
    #[arg(long, default_value_t = TARGET_SDR_RANGE_DB.0)]
    sdr_lo: f64,
    #[arg(long, default_value_t = TARGET_SDR_RANGE_DB.1)]
    sdr_hi: f64,
    /// Also assign splits with the global seed.
    #[arg(long)]
    split: bool,
}

#[derive(Args)]
struct SplitArgs {
    /// Manifest file or dataset directory; rewritten in place.
    manifest: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [SPLIT_RATIOS.0, SPLIT_RATIOS.1, SPLIT_RATIOS.2])]
    ratios: Vec<f64>,
}

#[derive(Args)]
struct TonesArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    count: usize,
}

#[derive(Args)]
struct EvalGridArgs {
    #[arg(long)]
    clean_dir: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = EVAL_GRID_DB)]
    grid: Vec<f64>,
    /// Also assign splits with the global seed.
    #[arg(long)]
    split: bool,
}

#[derive(Args)]
struct ModelOpts {
    /// Channels per level.
    #[arg(long, value_delimiter = ',', default_values_t = ModelSpec::default().channels)]
    channels: Vec<usize>,
    #[arg(long, default_value_t = ModelSpec::default().kernel_len)]
    kernel: usize,
}

impl ModelOpts {
    fn spec(&self) -> ModelSpec {
        ModelSpec {
            levels: self.channels.len(),
            channels: self.channels.clone(),
            kernel_len: self.kernel,
            ..ModelSpec::default()
        }
    }
}

#[derive(Args)]
struct TrainOpts {
    #[arg(long, default_value_t = TrainConfig::default().max_epochs)]
    epochs: usize,
    #[arg(long, default_value_t = TrainConfig::default().segment_len)]
    segment_len: usize,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    batch_size: usize,
    #[arg(long, default_value_t = TrainConfig::default().lr_init)]
    lr: f64,
    #[arg(long, default_value_t = TrainConfig::default().plateau_patience)]
    patience: usize,
    #[arg(long, default_value_t = TrainConfig::default().lr_factor)]
    lr_factor: f64,
}

impl TrainOpts {
    fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            segment_len: self.segment_len,
            batch_size: self.batch_size,
            lr_init: self.lr,
            plateau_patience: self.patience,
            lr_factor: self.lr_factor,
            max_epochs: self.epochs,
            seed,
            ..TrainConfig::default()
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Split manifest file or dataset directory.
    #[arg(long)]
    manifest: PathBuf,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch loss CSV (default: model path with `.csv`).
    #[arg(long)]
    log: Option<PathBuf>,
    #[command(flatten)]
    model: ModelOpts,
    #[command(flatten)]
    train: TrainOpts,
    #[arg(long, short)]
    quiet: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Methods to score besides the unprocessed input.
    #[arg(long, value_delimiter = ',', default_value = "aspade,irm")]
    methods: Vec<String>,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Directory for records.csv, summary.csv and run_info.json.
    #[arg(long)]
    out_dir: PathBuf,
    /// Write measured real-time factors into records.csv (breaks byte
    /// reproducibility).
    #[arg(long)]
    rtf_in_csv: bool,
}

#[derive(Subcommand)]
enum StudyCommand {
    /// Train with and without clean superposition and compare.
    Superposition(StudyArgs),
}

#[derive(Args)]
struct StudyArgs {
    #[arg(long)]
    clean_dir: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [0.5, 1.0])]
    alphas: Vec<f64>,
    /// Scratch directory for the per-weight corpora, models and logs.
    #[arg(long)]
    work_dir: PathBuf,
    /// Summary CSV.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    model: ModelOpts,
    #[command(flatten)]
    train: TrainOpts,
    #[arg(long, short)]
    quiet: bool,
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Real-time factor of a restoration method on one clip.
    Rtf(BenchArgs),
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    restore: RestoreOpts,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    input: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", one_line(&e));
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

/// Error chain on one line, skipping causes already quoted by their parent.
fn one_line(e: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !msg.contains(&text) {
            if !msg.is_empty() {
                msg.push_str(": ");
            }
            msg.push_str(&text);
        }
    }
    msg
}

fn run(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return usage("--jobs must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("configuring worker pool")?;
    }
    if cli.sample_rate == 0 {
        return usage("--sample-rate must be positive");
    }
    match cli.command {
        Command::Fx(a) => fx(a),
        Command::Declip(a) => declip(a),
        Command::Corpus(c) => corpus(c, cli.seed, cli.sample_rate),
        Command::Train(a) => train(a, cli.seed),
        Command::Eval(a) => eval(a),
        Command::Study(StudyCommand::Superposition(a)) => study(a, cli.seed, cli.sample_rate),
        Command::Bench(BenchCommand::Rtf(a)) => bench(a),
    }
}

fn fx(a: FxArgs) -> Result<()> {
    let spec = a.effect.spec(a.gain_db);
    if let Err(e) = spec.validate() {
        return usage(e.to_string());
    }
    let x = read_wav(&a.input)?;
    let y = apply(&x, &spec)?;
    write_wav(&y, &a.output, WavFormat::Float32)?;
    println!("{}", serde_json::to_string(&spec)?);
    Ok(())
}

/// A restoration method with its inputs resolved and validated.
enum Restorer {
    Aspade { threshold: Option<f64>, cfg: AspadeConfig },
    Irm { reference: Signal },
    Neural { model: ModelParams<f32>, path: PathBuf },
}

impl Restorer {
    fn resolve(o: &RestoreOpts) -> Result<Self> {
        Ok(match o.method {
            MethodArg::Aspade => {
                if let Some(t) = o.threshold {
                    if !(t > 0.0) {
                        return usage(format!("--threshold {t} must be positive"));
                    }
                }
                Restorer::Aspade {
                    threshold: o.threshold,
                    cfg: AspadeConfig {
                        skip_reliable_frames: o.skip_reliable_frames,
                        ..AspadeConfig::default()
                    },
                }
            }
            MethodArg::Irm => {
                let Some(path) = &o.reference else {
                    return usage("--method irm requires --reference");
                };
                Restorer::Irm {
                    reference: read_wav(path)?,
                }
            }
            MethodArg::Neural => {
                let Some(path) = &o.model else {
                    return usage("--method neural requires --model");
                };
                Restorer::Neural {
                    model: load_model(path)?,
                    path: path.clone(),
                }
            }
        })
    }

    fn run(&self, y: &Signal) -> Result<(Signal, serde_json::Value)> {
        Ok(match self {
            Restorer::Aspade { threshold, cfg } => {
                let mask = match threshold {
                    Some(t) => detect(y, *t)?,
                    None => detect_auto(y)?,
                };
                let (out, report) = declip_with_mask(y, &mask, cfg)?;
                let rtf = report.rtf;
                let stats = json!({
                    "threshold": report.threshold,
                    "threshold_source": if threshold.is_some() { "argument" } else { "detected" },
                    "clipped_samples": report.clipped_samples,
                    "frames_total": report.frames_total,
                    "frames_solved": report.frames_solved,
                    "unconverged_frames": report.unconverged_frames(),
                    "constraint_violations": report.constraint_violations,
                    "wall_time_s": report.wall_time_s,
                    "frame_iterations": report.frame_iterations,
                });
                (out, json!({ "method": "aspade", "parameters": cfg, "rtf": rtf, "solver": stats }))
            }
            Restorer::Irm { reference } => {
                let start = std::time::Instant::now();
                let cfg = StftConfig::default_hann();
                let out = apply_oracle(reference, y, cfg)?;
                let rtf = start.elapsed().as_secs_f64() / y.duration();
                (out, json!({ "method": "irm", "parameters": cfg, "rtf": rtf }))
            }
            Restorer::Neural { model, path } => {
                let (out, report) = infer(model, y)?;
                let params = json!({
                    "model": path,
                    "spec": model.spec(),
                    "param_count": model.len(),
                    "padded_len": report.padded_len,
                });
                (out, json!({ "method": "neural", "parameters": params, "rtf": report.rtf }))
            }
        })
    }

    fn process(&self, y: &Signal) -> unclip::Result<Signal> {
        self.run(y)
            .map(|(s, _)| s)
            .map_err(|e| unclip::Error::InvalidArgument(format!("{e:#}")))
    }
}

fn declip(a: DeclipArgs) -> Result<()> {
    let restorer = Restorer::resolve(&a.restore)?;
    let y = read_wav(&a.input)?;
    let (out, mut report) = restorer.run(&y)?;
    write_wav(&out, &a.output, WavFormat::Float32)?;
    report["input"] = json!(a.input);
    report["output"] = json!(a.output);
    report["audio_s"] = json!(y.duration());
    let report_path = a.report.unwrap_or_else(|| with_suffix(&a.output, ".json"));
    write_json(&report_path, &report)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn corpus(c: CorpusCommand, seed: u64, rate: u32) -> Result<()> {
    let manifest = match c {
        CorpusCommand::Synth(a) => {
            let m = match a.mode {
                SynthMode::GainGrid => {
                    let opts = EffectOpts {
                        effect: a.effect,
                        alpha: a.alpha,
                        threshold: a.threshold,
                        colour: a.colour,
                    };
                    let template = opts.spec(0.0);
                    if let Err(e) = template.validate() {
                        return usage(e.to_string());
                    }
                    synth_gain_grid(&a.clean_dir, &template, &a.out, seed, rate)?
                }
                SynthMode::TargetSdr => {
                    if !matches!(a.effect, EffectArg::Hardclip) {
                        return usage("target-sdr mode supports only --effect hardclip");
                    }
                    synth_target_sdr(&a.clean_dir, (a.sdr_lo, a.sdr_hi), &a.out, seed, rate)?
                }
            };
            maybe_split(m, a.split, seed)?
        }
        CorpusCommand::Split(a) => {
            let [train, valid, test] = a.ratios[..] else {
                return usage(format!("--ratios takes three values, got {}", a.ratios.len()));
            };
            let m = DatasetManifest::read(&a.manifest)?;
            let s = split(&m, (train, valid, test), seed)?;
            s.write()?;
            s
        }
        CorpusCommand::Tones(a) => synth_tones(&a.out, a.count, seed)?,
        CorpusCommand::EvalGrid(a) => {
            let m = synth_eval_grid(&a.clean_dir, &a.grid, &a.out, rate)?;
            maybe_split(m, a.split, seed)?
        }
    };
    let summary = json!({
        "manifest": manifest.root.join(unclip::corpus::MANIFEST_FILE),
        "entries": manifest.entries.len(),
        "total_duration_s": manifest.total_duration(),
        "seed": manifest.seed,
        "split_seed": manifest.split_seed,
    });
    println!("{}", serde_json::to_string(&summary)?);
    Ok(())
}

fn maybe_split(m: DatasetManifest, enabled: bool, seed: u64) -> Result<DatasetManifest> {
    if !enabled {
        return Ok(m);
    }
    let s = split(&m, SPLIT_RATIOS, seed)?;
    s.write()?;
    Ok(s)
}

fn train(a: TrainArgs, seed: u64) -> Result<()> {
    let manifest = DatasetManifest::read(&a.manifest)?;
    let spec = a.model.spec();
    let cfg = a.train.config(seed);
    if let Err(e) = spec.validate().and_then(|_| cfg.validate(&spec)) {
        return usage(e.to_string());
    }
    let quiet = a.quiet;
    let (model, log) = train_with(&manifest, &spec, &cfg, |e| {
        if !quiet {
            eprintln!(
                "epoch {:>4}  train {:>9.4}  valid {:>9.4}  lr {:.1e}",
                e.epoch, e.train_loss, e.valid_loss, e.lr
            );
        }
    })?;
    save_model(&model, &a.out)?;
    let log_path = a.log.unwrap_or_else(|| a.out.with_extension("csv"));
    fs::write(&log_path, log.to_csv()).with_context(|| format!("writing {}", log_path.display()))?;
    let summary = json!({
        "model": a.out,
        "log": log_path,
        "param_count": model.len(),
        "epochs": log.epochs.len() - 1,
        "steps": log.steps,
        "best_epoch": log.best_epoch,
        "best_valid_loss": log.best_valid_loss(),
        "config": cfg,
    });
    println!("{}", serde_json::to_string(&summary)?);
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let mut methods = Vec::new();
    for name in &a.methods {
        match name.parse::<Method>() {
            Ok(m) => methods.push(m),
            Err(e) => return usage(e.to_string()),
        }
    }
    let model = match (methods.contains(&Method::Neural), &a.model) {
        (true, None) => return usage("method neural requires --model"),
        (true, Some(p)) => Some(load_model(p)?),
        (false, _) => None,
    };
    let manifest = DatasetManifest::read(&a.manifest)?;
    let opts = EvalOptions {
        methods,
        model,
        ..EvalOptions::default()
    };
    let out = run_eval(&manifest, &opts)?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let records_path = a.out_dir.join("records.csv");
    let summary_path = a.out_dir.join("summary.csv");
    fs::write(&records_path, records_csv(&out.records, a.rtf_in_csv))?;
    fs::write(&summary_path, summary_csv(&out.summary))?;
    let rtf: Vec<_> = out
        .records
        .iter()
        .filter_map(|r| r.rtf.map(|v| json!({ "method": r.method, "clip_id": r.clip_id, "condition_db": r.condition_db, "rtf": v })))
        .collect();
    let info = json!({
        "finished_unix_s": SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        "manifest": a.manifest,
        "model": a.model,
        "methods": opts.methods,
        "records": out.records.len(),
        "quality_columns": { "peaq": "not implemented", "rnonlin": "not implemented", "fad": "not implemented" },
        "rtf": rtf,
        "version": env!("CARGO_PKG_VERSION"),
    });
    write_json(&a.out_dir.join("run_info.json"), &info)?;
    println!("{}", summary_csv(&out.summary).trim_end());
    Ok(())
}

fn study(a: StudyArgs, seed: u64, rate: u32) -> Result<()> {
    let spec = a.model.spec();
    let cfg = a.train.config(seed);
    if let Err(e) = spec.validate().and_then(|_| cfg.validate(&spec)) {
        return usage(e.to_string());
    }
    if !a.alphas.contains(&1.0) || !a.alphas.iter().any(|&v| v < 1.0) {
        return usage("--alphas must include 1.0 and at least one value below 1");
    }
    let study_cfg = StudyConfig {
        alphas: a.alphas.clone(),
        spec,
        train: cfg,
        seed,
        sample_rate: rate,
    };
    let quiet = a.quiet;
    let out = superposition_study(&a.clean_dir, &a.work_dir, &study_cfg, |alpha, e| {
        if !quiet {
            eprintln!("alpha {alpha}  epoch {:>4}  train {:>9.4}  valid {:>9.4}", e.epoch, e.train_loss, e.valid_loss);
        }
    })?;
    for (alpha, log) in &out.logs {
        let path = a.work_dir.join(format!("alpha_{alpha}")).join("train_log.csv");
        fs::write(&path, log.to_csv()).with_context(|| format!("writing {}", path.display()))?;
    }
    let csv = study_csv(&out.rows);
    fs::write(&a.out, &csv).with_context(|| format!("writing {}", a.out.display()))?;
    println!("{}", csv.trim_end());
    Ok(())
}

fn bench(a: BenchArgs) -> Result<()> {
    if a.repeats < 3 {
        return usage("--repeats must be at least 3");
    }
    let restorer = Restorer::resolve(&a.restore)?;
    let clip = read_wav(&a.input)?;
    let stats = measure_rtf(|y| restorer.process(y), &clip, a.repeats)?;
    let method = match a.restore.method {
        MethodArg::Aspade => "aspade",
        MethodArg::Irm => "irm",
        MethodArg::Neural => "neural",
    };
    println!("{}", serde_json::to_string(&json!({ "method": method, "input": a.input, "rtf": stats }))?);
    Ok(())
}
