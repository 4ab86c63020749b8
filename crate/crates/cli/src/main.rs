//! `pase`: synthetic data, training, evaluation, feature extraction and
//! embedding plots from one binary.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical divergence.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use pase::audio_encoder::EncoderVariant;
use pase::corpus::{generate_synthetic_corpus, Corpus, PhonemeInventory, SegmentBank, SynthConfig};
use pase::error::{ErrorKind, PaseError};
use pase::evaluation::{evaluate, export_features, extract_features, pooled_embeddings, project_embeddings, projection_svg};
use pase::frontend::{read_wav, FrontendVariant, SpectrogramExtractor};
use pase::nn::Parameters;
use pase::trainer::{Checkpoint, TrainConfig, Trainer};

#[derive(Debug, Parser)]
#[command(name = "pase", version, about = "Phoneme-aware speech encoder: data, training, evaluation and feature export")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a seeded synthetic corpus directory.
    SynthData(SynthArgs),
    /// Train on a corpus directory and write checkpoints.
    Train(TrainArgs),
    /// Report retrieval accuracy and phoneme-pair similarity on held-out clips.
    Eval(EvalArgs),
    /// Write per-video-frame features for one WAV file.
    Extract(ExtractArgs),
    /// PCA scatter plot (SVG) of pooled audio embeddings.
    Project(ProjectArgs),
    /// Print a checkpoint's step, configuration and tensors.
    InspectCheckpoint(InspectArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// TOML configuration file; flags override its values.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Random seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    /// Number of clips.
    #[arg(long)]
    clips: Option<usize>,
    /// Output corpus directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Corpus directory.
    #[arg(long, value_name = "DIR")]
    corpus: Option<PathBuf>,
    /// Output directory for checkpoints and metrics.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Total optimisation steps.
    #[arg(long)]
    steps: Option<u64>,
    /// Spectrogram front-end.
    #[arg(long, value_parser = ["stft", "mel"])]
    frontend: Option<String>,
    /// Temporal audio encoder.
    #[arg(long, value_parser = ["gru", "cnn"])]
    encoder: Option<String>,
    /// Resume from this checkpoint instead of initialising.
    #[arg(long, value_name = "FILE")]
    ckpt: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Checkpoint to evaluate.
    #[arg(long, value_name = "FILE")]
    ckpt: Option<PathBuf>,
    /// Corpus directory; its held-out clips are evaluated.
    #[arg(long, value_name = "DIR")]
    corpus: Option<PathBuf>,
    /// Also write the key=value records to this file.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExtractArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_name = "FILE")]
    ckpt: Option<PathBuf>,
    /// Mono 16-bit PCM WAV input.
    #[arg(long, value_name = "FILE")]
    audio: Option<PathBuf>,
    /// Feature file to write.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ProjectArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_name = "FILE")]
    ckpt: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    corpus: Option<PathBuf>,
    /// SVG file to write.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InspectArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_name = "FILE")]
    ckpt: Option<PathBuf>,
}

/// File-side mirror of every flag.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    corpus: Option<PathBuf>,
    out: Option<PathBuf>,
    ckpt: Option<PathBuf>,
    audio: Option<PathBuf>,
    synth: SynthSection,
    train: TrainConfig,
    eval: EvalSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SynthSection {
    clips: usize,
    #[serde(flatten)]
    config: SynthConfig,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            clips: 200,
            config: SynthConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EvalSection {
    /// Distractors per retrieval trial.
    negatives: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { negatives: 4 }
    }
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Pase(PaseError),
}

impl From<PaseError> for CliError {
    fn from(e: PaseError) -> Self {
        CliError::Pase(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Pase(e.into())
    }
}

type CliResult<T> = Result<T, CliError>;

fn load_config(common: &Common) -> CliResult<FileConfig> {
    let Some(path) = &common.config else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let mut cfg: FileConfig = toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    // Relative paths in the file are relative to the file.
    let base = path.parent().unwrap_or(Path::new("."));
    for p in [&mut cfg.corpus, &mut cfg.out, &mut cfg.ckpt, &mut cfg.audio].into_iter().flatten() {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    Ok(cfg)
}

fn required(flag: Option<PathBuf>, file: Option<PathBuf>, name: &str) -> CliResult<PathBuf> {
    flag.or(file)
        .ok_or_else(|| CliError::Usage(format!("--{name} is required (flag or config file)")))
}

fn synth_data(args: SynthArgs) -> CliResult<()> {
    let file = load_config(&args.common)?;
    let out = required(args.out, file.out, "out")?;
    let clips = args.clips.unwrap_or(file.synth.clips);
    let seed = args.common.seed.or(file.seed).unwrap_or(0);
    let corpus = generate_synthetic_corpus(clips, &PhonemeInventory::desk(), seed, &file.synth.config)?;
    corpus.save_dir(&out)?;
    println!("clips={clips} seed={seed} out={}", out.display());
    Ok(())
}

fn train_config(args: &TrainArgs, file: &FileConfig) -> CliResult<TrainConfig> {
    let mut cfg = file.train.clone();
    if let Some(seed) = args.common.seed.or(file.seed) {
        cfg.seed = seed;
    }
    if let Some(steps) = args.steps {
        cfg.steps = steps;
    }
    if let Some(f) = &args.frontend {
        cfg.frontend.variant = f.parse::<FrontendVariant>().map_err(CliError::Usage)?;
    }
    if let Some(e) = &args.encoder {
        cfg.model.encoder_variant = e.parse::<EncoderVariant>().map_err(CliError::Usage)?;
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

fn train(args: TrainArgs) -> CliResult<()> {
    let file = load_config(&args.common)?;
    let corpus_dir = required(args.corpus.clone(), file.corpus.clone(), "corpus")?;
    let out = required(args.out.clone(), file.out.clone(), "out")?;
    let corpus = Corpus::load_dir(&corpus_dir)?;
    let mut trainer = match args.ckpt.clone().or(file.ckpt.clone()) {
        Some(path) => {
            let mut ckpt = Checkpoint::load(&path)?;
            if let Some(steps) = args.steps {
                ckpt.config.steps = steps;
            }
            Trainer::resume(ckpt, &corpus)?
        }
        None => Trainer::new(&train_config(&args, &file)?, &corpus)?,
    };
    let initial = trainer.probe_loss()?;
    let metrics = trainer.run(Some(&out), |m| eprintln!("{}", m.to_record()))?;
    let final_loss = trainer.probe_loss()?;
    println!("steps={}", trainer.step);
    println!("trained_steps={}", metrics.len());
    println!("initial_loss={initial:.9}");
    println!("final_loss={final_loss:.9}");
    println!("checkpoint={}", out.join("final.ckpt").display());
    Ok(())
}

fn load_for_eval(ckpt: &Path, corpus_dir: &Path) -> CliResult<(Checkpoint, SegmentBank, Vec<usize>)> {
    let ckpt = Checkpoint::load(ckpt)?;
    let corpus = Corpus::load_dir(corpus_dir)?;
    let cfg = &ckpt.config;
    let bank = SegmentBank::build_sized(&corpus, &cfg.frontend, cfg.model.crop_size)?;
    if bank.inventory != ckpt.inventory {
        return Err(PaseError::Checkpoint("corpus inventory differs from the checkpoint".into()).into());
    }
    let (_, eval_pool) = bank.split_by_clip(cfg.holdout_fraction);
    let pool = if eval_pool.is_empty() { bank.all_indices() } else { eval_pool };
    Ok((ckpt, bank, pool))
}

fn eval(args: EvalArgs) -> CliResult<()> {
    let file = load_config(&args.common)?;
    let ckpt = required(args.ckpt, file.ckpt, "ckpt")?;
    let corpus = required(args.corpus, file.corpus, "corpus")?;
    let (ckpt, bank, pool) = load_for_eval(&ckpt, &corpus)?;
    let seed = args.common.seed.or(file.seed).unwrap_or(ckpt.config.seed);
    let report = evaluate(&ckpt.model, &bank, &pool, file.eval.negatives, seed)?;
    print!("{}", report.text());
    print!("{}", report.records());
    if let Some(out) = args.out.or(file.out) {
        fs::write(out, report.records())?;
    }
    Ok(())
}

fn extract(args: ExtractArgs) -> CliResult<()> {
    let file = load_config(&args.common)?;
    let ckpt = Checkpoint::load(&required(args.ckpt, file.ckpt, "ckpt")?)?;
    let audio_path = required(args.audio, file.audio, "audio")?;
    let out = required(args.out, file.out, "out")?;
    let (audio, sr) = read_wav(&audio_path)?;
    let frontend = &ckpt.config.frontend;
    if sr != frontend.sample_rate_hz {
        return Err(PaseError::UnsupportedAudio(format!("{sr} Hz input, model expects {} Hz", frontend.sample_rate_hz)).into());
    }
    let extractor = SpectrogramExtractor::new(frontend)?;
    let track = extract_features(&audio, &ckpt.model, &extractor, &audio_path.display().to_string())?;
    export_features(&track, &out)?;
    println!("frames={} dim={} fps={} out={}", track.len(), track.dim(), track.fps, out.display());
    Ok(())
}

fn project(args: ProjectArgs) -> CliResult<()> {
    let file = load_config(&args.common)?;
    let ckpt = required(args.ckpt, file.ckpt, "ckpt")?;
    let corpus = required(args.corpus, file.corpus, "corpus")?;
    let out = required(args.out, file.out, "out")?;
    let (ckpt, bank, pool) = load_for_eval(&ckpt, &corpus)?;
    let (emb, labels) = pooled_embeddings(&ckpt.model, &bank, &pool)?;
    let proj = project_embeddings(emb.view())?;
    fs::write(&out, projection_svg(proj.points.view(), &labels)?)?;
    println!(
        "points={} explained_1={:.6} explained_2={:.6} out={}",
        labels.len(),
        proj.explained[0],
        proj.explained[1],
        out.display()
    );
    Ok(())
}

fn inspect(args: InspectArgs) -> CliResult<()> {
    let file = load_config(&args.common)?;
    let ckpt = Checkpoint::load(&required(args.ckpt, file.ckpt, "ckpt")?)?;
    println!("step={}", ckpt.step);
    println!("optimizer_step={}", ckpt.optimizer.t);
    println!("phonemes={}", ckpt.inventory.len());
    println!("parameters={}", ckpt.model.param_count());
    for p in ckpt.model.collect_params() {
        println!("tensor={} shape={:?}", p.name, p.shape);
    }
    println!("[config]");
    print!("{}", ckpt.config.to_toml()?);
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::SynthData(a) => synth_data(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Extract(a) => extract(a),
        Command::Project(a) => project(a),
        Command::InspectCheckpoint(a) => inspect(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Pase(e)) => {
            eprintln!("error: {e}");
            if let PaseError::Divergence {
                last_checkpoint: Some(p), ..
            } = &e
            {
                eprintln!("last checkpoint: {}", p.display());
            }
            ExitCode::from(match e.kind() {
                ErrorKind::Usage => 1,
                ErrorKind::Data => 2,
                ErrorKind::Numerical => 3,
            })
        }
    }
}
