//! `trapsift` command-line entry point.
//!
//! Every command reads its inputs, calls into the `trapsift` library and
//! writes the result to files. Human-readable summaries go to stdout;
//! errors go to stderr with exit code 2 (usage or missing input), 3 (data or
//! integrity) or 4 (backend).

mod commands;
mod error;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use trapsift::backend::BACKEND_ENV;
use trapsift::bench::{DEFAULT_MEASURED_RUNS, DEFAULT_WARMUP_RUNS};
use trapsift::filterpipe::PixelScale;
use trapsift::metrics::{DEFAULT_TARGET_RECALL, DEFAULT_TNR_MARGIN};
use trapsift::splitgen::Partition;

#[derive(Parser, Debug)]
#[command(name = "trapsift", version, about = "Empty-image filtering for camera traps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Parse a COCO Camera Traps manifest into a labeled CSV.
    Ingest(IngestArgs),
    /// Split a labeled CSV into train, val_dev and val.
    Split(SplitArgs),
    /// Pick the threshold that reaches a target nonempty recall.
    Calibrate(ScoreArgs),
    /// Write the PR curve and summary metrics for one score file.
    Eval(ScoreArgs),
    /// Calibrate two runs and report how the second moved.
    Compare(CompareArgs),
    /// Measure inference latency and, optionally, peak memory.
    Bench(BenchArgs),
    /// Score images and discard the ones predicted empty.
    Filter(FilterArgs),
    /// Project the filter onto labeled scores.
    Simulate(SimulateArgs),
    /// Draw PR curves or a latency vs. PR-AUC scatter as SVG.
    Plot(PlotArgs),
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Categories treated as empty; repeatable.
    #[arg(long = "empty-category", default_values_t = ["empty".to_string(), "blank".to_string()])]
    pub empty_categories: Vec<String>,
    /// Keep only nonempty images that carry at least one bounding box.
    #[arg(long)]
    pub require_bbox: bool,
    /// CSV of image_id,season applied before labeling.
    #[arg(long)]
    pub season_map: Option<PathBuf>,
    /// Labeled CSV output.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-class and per-location counts as JSON.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitPolicy {
    Location,
    Time,
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, value_enum)]
    pub split: SplitPolicy,
    /// CSV mapping each location (or season) to train, val_dev or val.
    /// Time splits default to seasons 1-4 train, 5 val_dev, 6 val.
    #[arg(long)]
    pub assignment: Option<PathBuf>,
    /// Move this many random train locations into val_dev.
    #[arg(long)]
    pub holdout: Option<usize>,
    /// Empty images kept per location in train and val_dev; 0 disables the cap.
    #[arg(long, default_value_t = 1000)]
    pub cap: usize,
    /// Keep only images with bounding boxes (needs --manifest).
    #[arg(long)]
    pub bbox_only: bool,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Partitions to balance by undersampling; repeatable.
    #[arg(long, value_parser = parse_partition)]
    pub balance: Vec<Partition>,
    #[arg(long)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_partition(s: &str) -> Result<Partition, String> {
    s.parse::<Partition>().map_err(|e| e.to_string())
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TARGET_RECALL)]
    pub target_recall: f64,
    /// Output file (calibrate) or directory (eval).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    /// Baseline score file, then the candidate.
    #[arg(long, num_args = 1, required = true)]
    pub scores: Vec<PathBuf>,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TARGET_RECALL)]
    pub target_recall: f64,
    /// Allowed TNR drop before the candidate counts as degraded.
    #[arg(long, default_value_t = DEFAULT_TNR_MARGIN)]
    pub margin: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scale {
    Symmetric,
    Unit,
}

impl From<Scale> for PixelScale {
    fn from(s: Scale) -> Self {
        match s {
            Scale::Symmetric => PixelScale::Symmetric,
            Scale::Unit => PixelScale::Unit,
        }
    }
}

#[derive(Args, Debug)]
pub struct BackendArgs {
    /// Inference backend name.
    #[arg(long, env = BACKEND_ENV, default_value = "replay")]
    pub backend: String,
    /// Model artifact for the backend.
    #[arg(long)]
    pub model: PathBuf,
    /// Square input size; defaults to the model's own resolution, else 224.
    #[arg(long)]
    pub size: Option<u32>,
    #[arg(long, value_enum, default_value_t = Scale::Symmetric)]
    pub scale: Scale,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[command(flatten)]
    pub backend: BackendArgs,
    #[arg(long, default_value_t = DEFAULT_MEASURED_RUNS)]
    pub runs: usize,
    #[arg(long, default_value_t = DEFAULT_WARMUP_RUNS)]
    pub warmup: usize,
    /// Image fed on every run; a constant tensor when absent.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Also report peak resident memory over load + one inference.
    #[arg(long)]
    pub memory: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct FilterArgs {
    #[command(flatten)]
    pub backend: BackendArgs,
    #[arg(long, conflicts_with = "calibration", required_unless_present = "calibration")]
    pub threshold: Option<f64>,
    /// CalibrationResult JSON written by `calibrate`.
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    /// move, delete or mark.
    #[arg(long, default_value = "move")]
    pub action: String,
    #[arg(long)]
    pub quarantine: Option<PathBuf>,
    /// Write a marker file next to every kept image.
    #[arg(long)]
    pub markers: bool,
    /// Watch this directory for new images.
    #[arg(long, conflicts_with = "inputs")]
    pub watch: Option<PathBuf>,
    /// File name patterns for directories and watch mode; repeatable.
    #[arg(long = "pattern")]
    pub patterns: Vec<String>,
    /// Stop watching after this many idle seconds.
    #[arg(long)]
    pub idle_timeout: Option<f64>,
    /// JSON Lines decision log.
    #[arg(long)]
    pub out: PathBuf,
    /// SavingsReport JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Image files or directories.
    pub inputs: Vec<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, conflicts_with = "calibration", required_unless_present = "calibration")]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    /// Manifest supplying per-image byte sizes.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    /// Curve CSV written by `eval`; repeatable.
    #[arg(long = "curve")]
    pub curves: Vec<PathBuf>,
    /// Legend name per curve, in order; defaults to the file stem.
    #[arg(long = "label")]
    pub labels: Vec<String>,
    /// Latency vs. PR-AUC scatter; pairs each --bench with the --curve at the same position.
    #[arg(long)]
    pub scatter: bool,
    #[arg(long = "bench")]
    pub benches: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = commands::run(cli.command) {
        eprintln!("error: {e}");
        std::process::exit(e.code as i32);
    }
}
