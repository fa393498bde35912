//! The `fipoly` command line: train, evaluate, inpaint, synth-data, serve.
//!
//! Results go to stdout, one machine-readable line per command; everything
//! else is logged to stderr.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::data::synth_face;
use crate::error::{Error, Result};
use crate::inference::{encode_png, FrozenModel};
use crate::metrics::MetricsReport;
use crate::service::{serve, ServiceConfig};
use crate::trainer::{
    evaluate, evaluation_examples, identity_l1, load_checkpoint, save_checkpoint, write_atomically, Alternation,
    DatasetSource, GroundTruthOracle, LossTarget, StepLosses, TrainConfig, TrainState,
};

/// Exit code for bad input: config, missing files, mismatched sizes.
pub const EXIT_INPUT: i32 = 2;
/// Exit code for a training run aborted on a non-finite loss.
pub const EXIT_NAN: i32 = 3;

pub const CHECKPOINT_FILE: &str = "model.fipg";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Synthetic evaluation faces start this far from the training seeds, so
/// `evaluate` with the run seed scores faces the model never saw.
pub const HELD_OUT_OFFSET: u64 = 1 << 32;

/// Evaluation set size written into the run manifest.
const MANIFEST_EVAL_N: usize = 16;

#[derive(Debug, Parser)]
#[command(name = "fipoly", version, about = "Edge- and sketch-conditioned face inpainting")]
pub struct Cli {
    /// Run seed; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML training config. Flags win over values in the file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads. 1 makes every command fully deterministic.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write a checkpoint plus a run manifest.
    Train(TrainArgs),
    /// Score a checkpoint with SSIM, MSE and SNR.
    Evaluate(EvaluateArgs),
    /// Fill the holes of one image.
    Inpaint(InpaintArgs),
    /// Write synthetic face PNGs.
    SynthData(SynthArgs),
    /// Serve a checkpoint over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// `synthetic:<n>` or a directory of face images.
    #[arg(long)]
    pub dataset: Option<DatasetSource>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Training image side in pixels.
    #[arg(long)]
    pub side: Option<usize>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    #[arg(long, value_parser = parse_alternation)]
    pub alternate: Option<Alternation>,
    #[arg(long, value_parser = parse_loss_target)]
    pub loss_on: Option<LossTarget>,
    /// Zero the condition channel.
    #[arg(long)]
    pub ablate_condition: bool,
    /// Output directory for the checkpoint and manifest.
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, required_unless_present = "identity_stub")]
    pub checkpoint: Option<PathBuf>,
    /// Score the ground truth itself instead of a model.
    #[arg(long, conflicts_with = "checkpoint")]
    pub identity_stub: bool,
    #[arg(long, default_value = "synthetic:64")]
    pub dataset: DatasetSource,
    /// Number of images to score; clamped to the dataset size.
    #[arg(long, default_value_t = 64)]
    pub n: usize,
    /// Image side when no checkpoint fixes it.
    #[arg(long, default_value_t = 64)]
    pub side: usize,
}

#[derive(Debug, Args)]
pub struct InpaintArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// Single-channel image; values >= 128 are holes.
    #[arg(long)]
    pub mask: PathBuf,
    /// Single-channel image; values >= 128 are strokes.
    #[arg(long)]
    pub sketch: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub side: usize,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: SocketAddr,
}

fn parse_alternation(s: &str) -> std::result::Result<Alternation, String> {
    match s {
        "step" => Ok(Alternation::Step),
        "epoch" => Ok(Alternation::Epoch),
        _ => Err(format!("expected step or epoch, got {s:?}")),
    }
}

fn parse_loss_target(s: &str) -> std::result::Result<LossTarget, String> {
    match s {
        "composite" => Ok(LossTarget::Composite),
        "raw" => Ok(LossTarget::Raw),
        _ => Err(format!("expected composite or raw, got {s:?}")),
    }
}

/// Written next to the checkpoint when a training run ends.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: TrainConfig,
    pub seed: u64,
    /// Milliseconds since the Unix epoch.
    pub started_at_ms: u64,
    pub finished_at_ms: u64,
    pub steps: u64,
    pub epochs: u64,
    /// File name of the final checkpoint, relative to the manifest.
    pub checkpoint: String,
    pub model_id: String,
    pub final_metrics: MetricsReport,
    /// Mean identity L1 over the same evaluation examples.
    pub final_identity_l1: f64,
    pub losses: Vec<StepLosses>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    /// The manifest with wall-clock fields zeroed, for run-to-run comparison.
    pub fn without_timestamps(&self) -> Self {
        Self { started_at_ms: 0, finished_at_ms: 0, ..self.clone() }
    }
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

/// Maps an error to the process exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NonFiniteLoss { .. } => EXIT_NAN,
        Error::Shape(_) | Error::InvalidParameter(_) => 1,
        _ => EXIT_INPUT,
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            log::error!("{e}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        // a second call (e.g. from tests) keeps the existing pool
        if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            log::debug!("thread pool already configured");
        }
    }
    match &cli.command {
        Command::Train(a) => cmd_train(&cli, a),
        Command::Evaluate(a) => cmd_evaluate(&cli, a),
        Command::Inpaint(a) => cmd_inpaint(&cli, a),
        Command::SynthData(a) => cmd_synth_data(&cli, a),
        Command::Serve(a) => cmd_serve(&cli, a),
    }
}

fn base_config(cli: &Cli) -> Result<TrainConfig> {
    match &cli.config {
        Some(p) => TrainConfig::from_file(p),
        None => Ok(TrainConfig::default()),
    }
}

/// The config file (or defaults) with every given flag applied on top.
pub fn train_config(cli: &Cli, a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = base_config(cli)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(d) = &a.dataset {
        cfg.dataset = d.clone();
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if a.max_steps.is_some() {
        cfg.max_steps = a.max_steps;
    }
    if let Some(b) = a.batch_size {
        cfg.batch_size = b;
    }
    if let Some(s) = a.side {
        cfg.generator.image_side = s;
    }
    if let Some(c) = a.checkpoint_every {
        cfg.checkpoint_every = c;
    }
    if let Some(x) = a.alternate {
        cfg.alternate = x;
    }
    if let Some(l) = a.loss_on {
        cfg.loss_on = l;
    }
    cfg.ablate_condition |= a.ablate_condition;
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let cfg = train_config(cli, a)?;
    let started_at_ms = now_ms();
    let images = cfg.dataset.load(cfg.generator.image_side, cfg.seed)?;
    log::info!("training on {} images ({}), side {}", images.len(), cfg.dataset, cfg.generator.image_side);
    std::fs::create_dir_all(&a.out)?;
    let mut state = TrainState::new(cfg.clone())?;
    let every = cfg.checkpoint_every;
    let out = a.out.clone();
    let losses = state.fit(&images, |s, l| {
        if l.step % 10 == 0 || l.step == 1 {
            log::info!("step {} gan={:.4} identity_l1={:.4} adversarial={:.4}", l.step, l.gan, l.identity_l1, l.adversarial);
        }
        if every > 0 && l.step % every == 0 {
            save_checkpoint(s, &out.join(format!("step-{:06}.fipg", l.step)))?;
        }
        Ok(())
    })?;
    let model_id = save_checkpoint(&state, &a.out.join(CHECKPOINT_FILE))?;
    let ex_cfg = cfg.example_config();
    let n = MANIFEST_EVAL_N.min(images.len());
    let final_metrics = evaluate(&state, &images, n, cfg.seed, &ex_cfg)?;
    let final_identity_l1 = identity_l1(&state, &evaluation_examples(&images, n, cfg.seed, &ex_cfg)?)?;
    let manifest = RunManifest {
        seed: cfg.seed,
        config: cfg,
        started_at_ms,
        finished_at_ms: now_ms(),
        steps: state.step,
        epochs: state.epoch,
        checkpoint: CHECKPOINT_FILE.into(),
        model_id: model_id.clone(),
        final_metrics,
        final_identity_l1,
        losses,
    };
    let path = a.out.join(MANIFEST_FILE);
    write_atomically(&path, &serde_json::to_vec_pretty(&manifest)?)?;
    log::info!("wrote {} and {}", a.out.join(CHECKPOINT_FILE).display(), path.display());
    println!("{final_metrics} identity_l1={final_identity_l1:.6} steps={} model_id={model_id}", manifest.steps);
    Ok(())
}

fn cmd_evaluate(cli: &Cli, a: &EvaluateArgs) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    let (state, side) = match &a.checkpoint {
        Some(p) => {
            let (state, id) = load_checkpoint(p)?;
            log::info!("loaded model {id}");
            let side = state.config.generator.image_side;
            (Some(state), side)
        }
        None => (None, a.side),
    };
    let ex_cfg = match &state {
        Some(s) => s.config.example_config(),
        None => base_config(cli)?.example_config(),
    };
    let images = a.dataset.load(side, seed.wrapping_add(HELD_OUT_OFFSET))?;
    let n = if a.n > images.len() {
        log::warn!("n={} exceeds the {} available images; scoring {}", a.n, images.len(), images.len());
        images.len()
    } else {
        a.n
    };
    let report = match &state {
        Some(s) => evaluate(s, &images, n, seed, &ex_cfg)?,
        None => evaluate(&GroundTruthOracle, &images, n, seed, &ex_cfg)?,
    };
    println!("{report}");
    Ok(())
}

fn open_gray(path: &Path) -> Result<image::GrayImage> {
    Ok(image::open(path)?.to_luma8())
}

fn cmd_inpaint(cli: &Cli, a: &InpaintArgs) -> Result<()> {
    let model = FrozenModel::load(&a.checkpoint)?;
    let image = image::open(&a.image)?.to_rgb8();
    let mask = open_gray(&a.mask)?;
    let sketch = a.sketch.as_deref().map(open_gray).transpose()?;
    let out = model.inpaint(&image, &mask, sketch.as_ref(), cli.seed.unwrap_or(0))?;
    let condition = serde_json::to_value(out.condition)?;
    log::info!("condition: {}", condition.as_str().unwrap_or_default());
    write_atomically(&a.out, &encode_png(&out.image)?)?;
    println!("out={} condition={}", a.out.display(), condition.as_str().unwrap_or_default());
    Ok(())
}

/// File name of synthetic face `i`.
pub fn synth_file_name(i: usize) -> String {
    format!("face_{i:05}.png")
}

fn cmd_synth_data(cli: &Cli, a: &SynthArgs) -> Result<()> {
    if a.n == 0 {
        log::warn!("n=0, nothing to write");
        println!("wrote=0 dir={}", a.out_dir.display());
        return Ok(());
    }
    if a.side == 0 {
        return Err(Error::Config("--side must be positive".into()));
    }
    std::fs::create_dir_all(&a.out_dir)?;
    let seed = cli.seed.unwrap_or(0);
    for i in 0..a.n {
        let face = synth_face(seed.wrapping_add(i as u64), a.side);
        write_atomically(&a.out_dir.join(synth_file_name(i)), &encode_png(&face.to_rgb8())?)?;
    }
    println!("wrote={} dir={}", a.n, a.out_dir.display());
    Ok(())
}

fn cmd_serve(cli: &Cli, a: &ServeArgs) -> Result<()> {
    let model = FrozenModel::load(&a.checkpoint)?;
    let config = ServiceConfig::from_env()?;
    let mut rt = tokio::runtime::Builder::new_multi_thread();
    if let Some(n) = cli.threads {
        rt.worker_threads(n);
    }
    rt.enable_all().build()?.block_on(serve(model, config, a.bind))
}
