use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pdzseg_core::corrupt::CorruptionKind;
use pdzseg_core::synthetic::SceneKind;
use pdzseg_core::PromptKind;

#[derive(Debug, Parser)]
#[command(
    name = "pdzseg",
    version,
    about = "Prompt-conditioned dissection-zone segmentation",
    long_about = "Prompt-conditioned dissection-zone segmentation.\n\n\
                  Every run prints the resolved experiment configuration and its hash. \
                  Set PDZSEG_CACHE to a directory to cache rendered prompt overlays on disk."
)]
pub struct Cli {
    /// Log filter, e.g. `info` or `pdzseg_core=debug`.
    #[arg(long, global = true, env = "PDZSEG_LOG", default_value = "info")]
    pub log: String,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize prompts from ground-truth masks.
    GenPrompts(GenPromptsArgs),
    /// Train a model on a dataset manifest.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a split.
    Eval(EvalArgs),
    /// Apply a seeded corruption to a PNG.
    Corrupt(CorruptArgs),
    /// Segment one image and write the mask and its contours.
    Predict(PredictArgs),
    /// Run the HTTP inference service.
    Serve(ServeArgs),
    /// Write a synthetic dataset with a manifest.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PresetArg {
    /// ViT-Base at 532 px with rank-4 adapters.
    Full,
    /// Small from-scratch model at 64 px for CPU runs.
    Desk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RegimeArg {
    SinglePrompt,
    PromptVsNoneRatio,
    FourWayMix,
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// Experiment configuration file (JSON). Flags override its fields.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Built-in configuration used when no file is given.
    #[arg(long, value_enum, default_value = "full")]
    pub preset: PresetArg,

    /// Validate inputs and print the plan without side effects.
    #[arg(long)]
    pub dry_run: bool,
}

pub fn parse_prompt_kind(s: &str) -> Result<PromptKind, String> {
    s.parse().map_err(|e: pdzseg_core::Error| e.to_string())
}

fn parse_corruption_kind(s: &str) -> Result<CorruptionKind, String> {
    s.parse().map_err(|e: pdzseg_core::Error| e.to_string())
}

fn parse_scene(s: &str) -> Result<SceneKind, String> {
    s.parse().map_err(|e: pdzseg_core::Error| e.to_string())
}

fn parse_kind_fraction(s: &str) -> Result<(PromptKind, f64), String> {
    let (k, f) = s
        .split_once('=')
        .ok_or_else(|| format!("expected KIND=FRACTION, got {s:?}"))?;
    let f: f64 = f.parse().map_err(|e| format!("bad fraction in {s:?}: {e}"))?;
    Ok((parse_prompt_kind(k)?, f))
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: ConfigArgs,

    /// Dataset manifest.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Checkpoint whose encoder tensors initialize the backbone.
    #[arg(long)]
    pub pretrained: Option<PathBuf>,
    /// Output checkpoint; the best epoch is also written as `<stem>.best.safetensors`.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Directory for the run report.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,

    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, alias = "lr")]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    #[arg(long)]
    pub adam_eps: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Per-epoch validation on the test split.
    #[arg(long)]
    pub validate: Option<bool>,

    /// Mixing regime; inferred from the other mix flags when omitted.
    #[arg(long, value_enum)]
    pub regime: Option<RegimeArg>,
    #[arg(long, value_parser = parse_prompt_kind)]
    pub prompt_kind: Option<PromptKind>,
    #[arg(long)]
    pub prompted_fraction: Option<f64>,
    /// Share of one kind in a four-way mix, e.g. `bbox=0.25`. Repeatable.
    #[arg(long, value_parser = parse_kind_fraction)]
    pub kind_fraction: Vec<(PromptKind, f64)>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: ConfigArgs,

    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Prompt kind drawn on every evaluated frame.
    #[arg(long, value_parser = parse_prompt_kind, default_value = "none")]
    pub prompt: PromptKind,
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long, value_parser = parse_corruption_kind)]
    pub corruption: Option<CorruptionKind>,
    #[arg(long, default_value_t = 3, requires = "corruption")]
    pub severity: u8,
    #[arg(long, default_value_t = 0)]
    pub corruption_seed: u64,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    /// Metrics report (JSON). Printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenPromptsArgs {
    #[command(flatten)]
    pub common: ConfigArgs,

    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Split to process; `all` covers every sample.
    #[arg(long, default_value = "train")]
    pub split: String,
    #[arg(long, value_parser = parse_prompt_kind)]
    pub kind: PromptKind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output JSON object mapping sample id to prompt document.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write each frame with its prompt painted in.
    #[arg(long)]
    pub render_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CorruptArgs {
    #[command(flatten)]
    pub common: ConfigArgs,

    #[arg(long, value_parser = parse_corruption_kind)]
    pub kind: CorruptionKind,
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=5))]
    pub severity: u8,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    pub input: PathBuf,
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub common: ConfigArgs,

    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub image: PathBuf,
    /// Prompt document (JSON); no prompt when omitted.
    #[arg(long)]
    pub prompt: Option<PathBuf>,
    /// Output label PNG (0 = no-go zone, 1 = dissection zone).
    #[arg(long)]
    pub out: PathBuf,
    /// Output contour polylines (JSON).
    #[arg(long)]
    pub contours: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub common: ConfigArgs,

    /// Checkpoint to serve, as `PATH` or `ID=PATH`. Repeatable; the first is the default model.
    #[arg(long = "ckpt")]
    pub ckpts: Vec<String>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Concurrent forward passes.
    #[arg(long, default_value_t = 2)]
    pub workers: usize,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: ConfigArgs,

    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_parser = parse_scene, default_value = "two_blob")]
    pub scene: SceneKind,
    #[arg(long, default_value_t = 400)]
    pub n_train: usize,
    #[arg(long, default_value_t = 100)]
    pub n_test: usize,
    /// Frame side in pixels.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 10)]
    pub frames_per_video: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}
