use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "mgdoc", version, about = "Multi-modal, multi-granular document transformer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert a dataset or a synthetic spec into canonical document JSON.
    Ingest(IngestArgs),
    /// Pre-train on an unlabeled corpus.
    Pretrain(PretrainArgs),
    /// Fine-tune a task head (from a checkpoint or random init) and score it.
    Finetune(FinetuneArgs),
    /// Score a fine-tuned checkpoint without training.
    Eval(EvalArgs),
    /// Export the region-by-word fused-feature heatmap of one document.
    Heatmap(HeatmapArgs),
    /// Run a pre-training task / granularity ablation grid.
    Ablate(AblateArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum InputFormat {
    Funsd,
    Cord,
    Rvlcdip,
    Ocr,
    Synthetic,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long, value_enum)]
    pub format: InputFormat,
    /// Dataset split directory, annotation file or directory, label index, or
    /// OCR export.
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    /// Output directory for `<id>.json` (and `<id>.png`) files.
    #[arg(long)]
    pub out: PathBuf,
    /// Synthetic corpus spec (JSON).
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Horizontal word gap for OCR grouping (page fraction).
    #[arg(long)]
    pub gap_x: Option<f64>,
    /// Vertical center gap for OCR grouping (page fraction).
    #[arg(long)]
    pub gap_y: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Continue from a checkpoint at its saved step.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Pre-training objectives, e.g. `mtm,mvm`.
    #[arg(long)]
    pub tasks: Option<String>,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    /// `entity` or `classify`.
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training corpus; split 8:1:1 when no evaluation corpus is given.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub eval_corpus: Option<PathBuf>,
    /// Pre-trained checkpoint; random initialization when absent.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Fine-tuned checkpoint carrying a task head.
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct HeatmapArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Canonical document JSON.
    #[arg(long)]
    pub doc: PathBuf,
    /// Directory receiving heatmap.csv and heatmap.png.
    #[arg(long)]
    pub out: PathBuf,
    /// Only needed for external embedding tables.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Unlabeled pre-training corpus.
    #[arg(long)]
    pub pretrain_corpus: PathBuf,
    #[arg(long)]
    pub train_corpus: PathBuf,
    #[arg(long)]
    pub eval_corpus: PathBuf,
    /// Semicolon-separated task sets; an empty entry means no pre-training.
    #[arg(long, default_value = ";mtm,mvm;mtm,mvm,mgm")]
    pub tasks_grid: String,
    /// Semicolon-separated granularity sets.
    #[arg(long, default_value = "page,region,word")]
    pub granularities_grid: String,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}
