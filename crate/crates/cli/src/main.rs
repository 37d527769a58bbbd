use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use denet::eval::{self, evaluate, load_test_set, write_curves, write_plots};
use denet::features::{load_manifest, read_feature_file, FeatureSequence, DEFAULT_CLIP_LEN};
use denet::synth::{generate_synthetic, SynthConfig};
use denet::train::{run, TrainOptions, FINAL_CHECKPOINT};
use denet::{Checkpoint, EraseMode, Error, Split, TrainConfig, Trainer, TrainingSet};

const EXIT_VALIDATION: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "denet", version, about = "Weakly supervised video anomaly detection with dynamic erasing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with frame-level ground truth.
    Synth(SynthArgs),
    /// Train a model on a training manifest.
    Train(TrainArgs),
    /// Score a test manifest and report frame-level AUC and AP.
    Eval(EvalArgs),
    /// Score a single feature file, one row per frame.
    Score(ScoreArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// JSON file with generator settings; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, env = "DENET_SEED")]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Training manifest (video_id,label,feature_path,frame_count,gt_path).
    #[arg(long)]
    manifest: PathBuf,
    /// Test manifest scored periodically for logging only.
    #[arg(long)]
    val_manifest: Option<PathBuf>,
    /// JSON file with training settings; missing keys take their defaults.
    #[arg(long, conflicts_with = "resume")]
    config: Option<PathBuf>,
    #[arg(long, env = "DENET_SEED", conflicts_with = "resume")]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: PathBuf,
    /// Train without the erased pass.
    #[arg(long, conflicts_with_all = ["static_erase", "resume"])]
    no_erase: bool,
    /// Erase every abnormal video, skipping the completeness test.
    #[arg(long, conflicts_with = "resume")]
    static_erase: bool,
    #[arg(long, conflicts_with = "resume")]
    scales: Option<usize>,
    #[arg(long, conflicts_with = "resume")]
    delta: Option<f64>,
    #[arg(long, conflicts_with = "resume")]
    learning_rate: Option<f64>,
    /// Total iteration budget; on resume this may extend the original budget.
    #[arg(long)]
    iterations: Option<u64>,
    /// Log every erase decision to erase_audit.jsonl.
    #[arg(long)]
    audit_erase: bool,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Test manifest; every row needs a gt_path.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    output_dir: PathBuf,
    /// Also write one SVG score curve per video.
    #[arg(long)]
    plot: bool,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    features: PathBuf,
    /// Frames in the video; defaults to clips x 16.
    #[arg(long)]
    frame_count: Option<usize>,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
}

/// Reads a JSON object of settings, rejecting unknown keys by name.
fn read_config<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> denet::Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn cmd_synth(args: SynthArgs) -> denet::Result<()> {
    let cfg: SynthConfig = read_config(args.config.as_deref())?;
    cfg.validate()?;
    let seed = args.seed.unwrap_or(0);
    let ds = generate_synthetic(&cfg, seed, &args.output_dir)?;
    log::info!(
        "wrote {} training and {} test videos to {}",
        ds.train.entries.len(),
        ds.test.entries.len(),
        args.output_dir.display()
    );
    Ok(())
}

fn train_config(args: &TrainArgs) -> denet::Result<TrainConfig> {
    let mut cfg: TrainConfig = read_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if args.no_erase {
        cfg.erase_mode = EraseMode::None;
    }
    if args.static_erase {
        cfg.erase_mode = EraseMode::Static;
    }
    if let Some(s) = args.scales {
        cfg.scales = s;
    }
    if let Some(d) = args.delta {
        cfg.delta = d;
    }
    if let Some(lr) = args.learning_rate {
        cfg.learning_rate = lr;
    }
    if let Some(n) = args.iterations {
        cfg.max_iterations = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(args: TrainArgs) -> denet::Result<()> {
    let mut trainer = match &args.resume {
        Some(path) => {
            let mut t = Trainer::from_checkpoint(Checkpoint::load(path)?)?;
            if let Some(n) = args.iterations {
                t.config.max_iterations = n;
            }
            log::info!("resuming at iteration {} of {}", t.iteration, t.config.max_iterations);
            t
        }
        None => {
            let cfg = train_config(&args)?;
            let probe = load_manifest(&args.manifest, Split::Train)?;
            let dim = probe.entries[0].load_sequence()?.dim();
            Trainer::new(cfg, dim)?
        }
    };
    let cfg = trainer.config.clone();
    let manifest = load_manifest(&args.manifest, Split::Train)?;
    let data = TrainingSet::load(&manifest, cfg.segments, cfg.scales)?;
    let validation = match &args.val_manifest {
        Some(p) => Some(load_test_set(&load_manifest(p, Split::Test)?, cfg.segments, cfg.scales)?),
        None => None,
    };
    fs::create_dir_all(&args.output_dir).map_err(io_err(&args.output_dir))?;
    let cfg_path = args.output_dir.join("train_config.json");
    fs::write(&cfg_path, serde_json::to_string_pretty(&cfg)?).map_err(io_err(&cfg_path))?;
    let opts = TrainOptions {
        output_dir: Some(args.output_dir.clone()),
        audit_erase: args.audit_erase,
    };
    let ckpt = run(&mut trainer, &data, validation.as_deref(), &opts)?;
    log::info!(
        "finished {} iterations; checkpoint {}",
        ckpt.iteration,
        args.output_dir.join(FINAL_CHECKPOINT).display()
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> denet::Result<()> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let manifest = load_manifest(&args.manifest, Split::Test)?;
    let cfg = &ckpt.model.config;
    let videos = load_test_set(&manifest, cfg.segments, cfg.scales)?;
    let (report, predictions) = evaluate(&ckpt.model, &videos)?;
    fs::create_dir_all(&args.output_dir).map_err(io_err(&args.output_dir))?;
    let json = serde_json::to_string_pretty(&report)?;
    let report_path = args.output_dir.join("report.json");
    fs::write(&report_path, &json).map_err(io_err(&report_path))?;
    write_curves(&args.output_dir.join("curves"), &predictions)?;
    if args.plot {
        write_plots(&args.output_dir.join("plots"), &predictions)?;
    }
    println!("{json}");
    Ok(())
}

fn cmd_score(args: ScoreArgs) -> denet::Result<()> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let clips = read_feature_file(&args.features)?;
    let frame_count = args.frame_count.unwrap_or(clips.nrows() * DEFAULT_CLIP_LEN);
    let id = args.features.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let seq = FeatureSequence::new(id, clips, frame_count)?;
    let cfg = &ckpt.model.config;
    if seq.dim() != cfg.dim {
        return Err(Error::Shape(format!(
            "{}: feature dimension {} does not match the model's {}",
            args.features.display(),
            seq.dim(),
            cfg.dim
        )));
    }
    let x = denet::features::resample_to_segments(&seq, cfg.segments)?;
    let scores = ckpt.model.score(x.view())?;
    let frames = eval::frame_scores(scores.view(), frame_count);
    let mut text = String::from("frame,score\n");
    for (j, s) in frames.iter().enumerate() {
        text.push_str(&format!("{j},{s}\n"));
    }
    match &args.output {
        Some(path) => fs::write(path, text).map_err(io_err(path))?,
        None => io::stdout().write_all(text.as_bytes()).map_err(io_err(Path::new("<stdout>")))?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Score(a) => cmd_score(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { EXIT_VALIDATION } else { EXIT_RUNTIME })
        }
    }
}
