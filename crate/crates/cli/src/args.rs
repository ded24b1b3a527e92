use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use tongue_core::data::Holdout;

#[derive(Debug, Parser, Serialize)]
#[command(name = "tongue", version, about = "Tongue image normalization, attribute network and evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// Write a synthetic tongue dataset and its manifest.
    #[command(args_override_self = true)]
    Synth(SynthArgs),
    /// Upright every image of a manifest and write a new manifest.
    #[command(args_override_self = true)]
    Normalize(NormalizeArgs),
    /// Split uprighted images into body and edge regions.
    #[command(args_override_self = true)]
    Separate(SeparateArgs),
    /// Write a subject-disjoint fold plan.
    #[command(args_override_self = true)]
    Split(SplitArgs),
    /// Train the attribute network, per fold when a plan is given.
    #[command(args_override_self = true)]
    Train(TrainArgs),
    /// Score predictions against manifest labels.
    #[command(args_override_self = true)]
    Eval(EvalArgs),
    /// Predict attributes for every image of a manifest.
    #[command(args_override_self = true)]
    Predict(PredictArgs),
    /// Write per-attribute ROC points and AUCs.
    #[command(args_override_self = true)]
    Roc(RocArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct Common {
    /// TOML file whose keys are flag names; flags on the command line win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Threads for per-image stages.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct OrientArgs {
    /// Contour segments steeper than this (degrees) are dropped.
    #[arg(long, default_value_t = 60.0)]
    pub alpha: f64,
    /// Contour smoothing window; default 5% of the width, odd.
    #[arg(long)]
    pub smoothing: Option<usize>,
    /// Crop margin around the uprighted tongue, pixels.
    #[arg(long, default_value_t = 10)]
    pub margin: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct RegionArgs {
    /// Edge band width as a fraction of the image diagonal.
    #[arg(long, default_value_t = 0.191)]
    pub edge_ratio: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 64)]
    pub count: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 256)]
    pub side: usize,
    /// Largest absolute tilt, degrees.
    #[arg(long, default_value_t = 45.0)]
    pub max_rotation: f64,
    /// Probability of each attribute.
    #[arg(long, default_value_t = 0.4)]
    pub probability: f64,
    /// Per-pixel noise standard deviation, grey levels.
    #[arg(long, default_value_t = 3.0)]
    pub noise: f64,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args, Serialize)]
pub struct NormalizeArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write contour and tip/top overlays.
    #[arg(long)]
    pub overlay: bool,
    #[command(flatten)]
    pub orient: OrientArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args, Serialize)]
pub struct SeparateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub region: RegionArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args, Serialize)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Hold-out share of subjects (below 1) or subject count.
    #[arg(long, default_value = "0.2", value_parser = parse_holdout)]
    #[serde(serialize_with = "holdout_text")]
    pub holdout: Holdout,
    #[arg(long)]
    pub seed: u64,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassWeights {
    /// Median positive count over each attribute's positive count, per training fold.
    Median,
    Uniform,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Fold plan from `split`; without it the whole manifest is trained on.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    /// Train only this fold of the plan.
    #[arg(long, requires = "plan")]
    pub fold: Option<usize>,
    #[arg(long)]
    pub seed: u64,
    /// Network input side, pixels.
    #[arg(long, default_value_t = 256)]
    pub side: usize,
    #[arg(long, value_delimiter = ',', default_value = "16,32,64,128")]
    pub widths: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    pub blocks: usize,
    #[arg(long, default_value_t = 64)]
    pub d_model: usize,
    #[arg(long, default_value_t = 4)]
    pub ffn_mult: usize,
    #[arg(long, default_value_t = 2e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub stop_at_f1: Option<f64>,
    #[arg(long, default_value_t = 0.01)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 1.0)]
    pub w_color: f64,
    #[arg(long, default_value_t = 0.6)]
    pub w_fur: f64,
    #[arg(long, value_enum, default_value_t = ClassWeights::Median)]
    pub class_weights: ClassWeights,
    /// Count redspot as a fur sign for the auxiliary fur label.
    #[arg(long)]
    pub fur_includes_redspot: bool,
    #[command(flatten)]
    pub orient: OrientArgs,
    #[command(flatten)]
    pub region: RegionArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args, Serialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Predictions CSV.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    /// Manifest holding the true labels.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Report JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write ROC point files here (needs score columns).
    #[arg(long)]
    pub roc_dir: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args, Serialize)]
pub struct RocArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

fn parse_holdout(s: &str) -> Result<Holdout, String> {
    let v: f64 = s.parse().map_err(|_| format!("not a number: {s}"))?;
    if (0.0..1.0).contains(&v) {
        Ok(Holdout::Fraction(v))
    } else if v >= 1.0 && v.fract() == 0.0 {
        Ok(Holdout::Count(v as usize))
    } else {
        Err(format!("expected a share in [0, 1) or a whole subject count, got {s}"))
    }
}

fn holdout_text<S: serde::Serializer>(h: &Holdout, s: S) -> Result<S::Ok, S::Error> {
    match h {
        Holdout::Fraction(f) => s.serialize_f64(*f),
        Holdout::Count(c) => s.serialize_u64(*c as u64),
    }
}

impl Command {
    pub fn common(&self) -> &Common {
        match self {
            Command::Synth(a) => &a.common,
            Command::Normalize(a) => &a.common,
            Command::Separate(a) => &a.common,
            Command::Split(a) => &a.common,
            Command::Train(a) => &a.common,
            Command::Eval(a) => &a.common,
            Command::Predict(a) => &a.common,
            Command::Roc(a) => &a.common,
        }
    }
}
