use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "slidebench", version, about = "Whole-slide tiling, feature bags and slide-level MIL benchmarks")]
pub struct Cli {
    /// Worker threads for every pool (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub workers: usize,
    /// Only log warnings and errors.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic pyramidal slide, or a whole synthetic dataset with --fixture.
    Synth(SynthArgs),
    /// Detect tissue and cut filtered tiles from slides into a dataset.
    Crop(CropArgs),
    /// Embed every slide's tiles into <slide_id>.h5 feature files.
    Embed(EmbedArgs),
    /// Check feature files against their tile manifests.
    Validate(ValidateArgs),
    /// Assign labeled slides to train/val/test by patient.
    Split(SplitArgs),
    /// Train a slide-level model on the train split.
    Train(TrainArgs),
    /// Score a checkpoint on one split.
    Eval(EvalArgs),
    /// Collect metrics files into bench.md and bench.csv.
    Report(ReportArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    /// Output .tiff path, or output directory with --fixture.
    #[arg(long)]
    pub out: PathBuf,
    /// Write a labeled multi-slide dataset (slides/ and dataset/task-settings/).
    #[arg(long)]
    pub fixture: bool,
    /// Slides in the fixture dataset.
    #[arg(long, default_value_t = 12)]
    pub slides: usize,
    /// JSON slide description; overrides the geometry flags.
    #[arg(long, conflicts_with = "fixture")]
    pub spec: Option<PathBuf>,
    /// Level-0 width (fixture: slide edge).
    #[arg(long, default_value_t = 1024)]
    pub width: u32,
    #[arg(long, default_value_t = 1024)]
    pub height: u32,
    /// Level-0 microns per pixel.
    #[arg(long, default_value_t = 0.5)]
    pub mpp: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Tissue blob "cx,cy,rx,ry" in level-0 pixels (repeatable).
    #[arg(long = "blob", value_name = "CX,CY,RX,RY")]
    pub blobs: Vec<String>,
    /// Axis-aligned tissue rectangle "x0,y0,w,h" (repeatable).
    #[arg(long = "rect", value_name = "X0,Y0,W,H")]
    pub rects: Vec<String>,
    /// Pyramid levels (default: halve while the longer side stays >= 1024).
    #[arg(long)]
    pub levels: Option<usize>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct CropArgs {
    /// Slide files (repeatable; one flag may take several paths).
    #[arg(long = "slide", required = true, num_args = 1..)]
    pub slides: Vec<PathBuf>,
    /// Dataset root.
    #[arg(long)]
    pub out: PathBuf,
    /// Target microns per pixel of the tiles.
    #[arg(long = "mpp", default_value_t = 0.5)]
    pub target_mpp: f64,
    /// Tile edge in pixels at the target mpp.
    #[arg(long = "tile", default_value_t = 224)]
    pub tile_size: u32,
    /// Grid step at the target mpp (default: tile size).
    #[arg(long)]
    pub stride: Option<u32>,
    /// Read chunk edge in level-0 pixels.
    #[arg(long, default_value_t = 4096)]
    pub chunk_size: u32,
    #[arg(long, default_value_t = 0.25)]
    pub min_coverage: f64,
    #[arg(long, default_value_t = 15.0)]
    pub min_variance: f64,
    /// Tissue-mask thumbnail resolution.
    #[arg(long, default_value_t = 8.0)]
    pub mask_mpp: f64,
    /// Smallest kept tissue component, in thumbnail pixels.
    #[arg(long, default_value_t = 64)]
    pub min_region_area: u64,
    /// Write qc_mask.png beside each manifest.
    #[arg(long)]
    pub emit_qc: bool,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderChoice {
    Native,
    External,
}

#[derive(Debug, Args, Serialize)]
pub struct EmbedArgs {
    /// Dataset root.
    pub dataset: PathBuf,
    #[arg(long, value_enum, default_value_t = EmbedderChoice::Native)]
    pub embedder: EmbedderChoice,
    /// Feature dimension D.
    #[arg(long, default_value_t = 128)]
    pub dim: usize,
    /// Projection seed (native).
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Embedder id (external; native ids are derived from seed and dim).
    #[arg(long)]
    pub embedder_id: Option<String>,
    /// Adapter command for --embedder external.
    #[arg(long)]
    pub adapter_cmd: Option<String>,
    /// Tiles per batch.
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    /// mpp recorded when a slide has no tile_meta.json.
    #[arg(long, default_value_t = 0.5)]
    pub fallback_mpp: f64,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct ValidateArgs {
    /// Dataset root.
    pub dataset: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SplitArgs {
    /// Dataset root.
    pub dataset: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Train:val:test weights.
    #[arg(long, default_value = "7:1:2")]
    pub ratios: String,
    /// Stratify by the labels of this classification task.
    #[arg(long)]
    pub stratify: Option<String>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Dataset root.
    pub dataset: PathBuf,
    /// Task to train (repeatable; default: all tasks, one multi-task model).
    #[arg(long = "task")]
    pub tasks: Vec<String>,
    /// SlideAve, SlideMax or ABMIL.
    #[arg(long, default_value = "ABMIL")]
    pub model: String,
    /// Attention hidden size L.
    #[arg(long, default_value_t = 128)]
    pub hidden: usize,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 20)]
    pub patience: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub beta1: f64,
    #[arg(long, default_value_t = 0.999)]
    pub beta2: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub eps: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// pearson or spearman (regression validation metric).
    #[arg(long, default_value = "pearson")]
    pub correlation: String,
    /// Checkpoint directory (default: <dataset>/models).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    /// Dataset root.
    pub dataset: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// train, val or test.
    #[arg(long, default_value = "test")]
    pub subset: String,
    /// pearson or spearman.
    #[arg(long, default_value = "pearson")]
    pub correlation: String,
    /// Metrics JSON (default: <dataset>/metrics/<checkpoint>-<subset>.json).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    /// Dataset root; metrics default to <dataset>/metrics/*.json.
    pub dataset: PathBuf,
    /// Metrics JSON files or directories (repeatable).
    #[arg(long = "metrics")]
    pub metrics: Vec<PathBuf>,
    /// Output directory for bench.md and bench.csv (default: dataset root).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}
