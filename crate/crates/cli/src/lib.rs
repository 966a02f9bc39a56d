//! The `ovdprobe` command line: one subcommand per pipeline stage.

mod analysis;
pub mod config;
mod data;
pub mod manifest;
mod probes;
mod remote;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use ovdprobe_core::dataset::{load_dataset, AnnotationEntry, SceneRecord};

use crate::config::{ConfigFile, Resolver};

#[derive(Debug, Parser)]
#[command(name = "ovdprobe", version, about = "Inpainting test bench for open-vocabulary object detectors")]
pub struct Cli {
    /// Flat `key = value` settings file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate an annotation file and select eligible scenes.
    Ingest(IngestArgs),
    /// Plan hybrid-concept inpainting jobs.
    PlanHybrid(PlanHybridArgs),
    /// Plan single-concept inpainting jobs.
    PlanSingle(PlanSingleArgs),
    /// Sample random object locations on one scene and plan their jobs.
    PlanRandom(PlanRandomArgs),
    /// Run planned jobs against an inpainting service.
    Inpaint(InpaintArgs),
    /// Produce control-probe images.
    Probe(ProbeArgs),
    /// Query a detector service for predictions.
    Detect(DetectArgs),
    /// Compute AUPRC, AP, AR and TP/FP/FN tables.
    Eval(EvalArgs),
    /// Accumulate and render pixel-wise recall and FN heatmaps.
    Heatmap(HeatmapArgs),
    /// Correlate per-scene FN vectors.
    Correlate(CorrelateArgs),
    /// Merge result tables and render heatmap grids.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    /// Directory image and mask paths are relative to (default: the
    /// annotation file's directory).
    #[arg(long)]
    pub image_root: Option<PathBuf>,
    #[arg(long, default_value_t = ovdprobe_core::dataset::MIN_OBJECT_PIXELS)]
    pub min_area: u64,
    /// Keep scenes with several objects when one of them is large enough.
    #[arg(long)]
    pub allow_multi_object: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PlanHybridArgs {
    #[arg(long)]
    pub scenes: PathBuf,
    #[arg(long)]
    pub image_root: Option<PathBuf>,
    /// Noun list, one per line.
    #[arg(long)]
    pub nouns: PathBuf,
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub repeats: Option<u32>,
    #[arg(long)]
    pub batch_size: Option<u32>,
    /// Output ids to leave out of the plan.
    #[arg(long)]
    pub discard_file: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PlanSingleArgs {
    #[arg(long)]
    pub scenes: PathBuf,
    #[arg(long)]
    pub image_root: Option<PathBuf>,
    /// Keyword list (default: the built-in list).
    #[arg(long)]
    pub keywords: Option<PathBuf>,
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub min_overlap: Option<f64>,
    #[arg(long, default_value_t = ovdprobe_core::dataset::MIN_OBJECT_PIXELS)]
    pub min_area: u64,
    #[arg(long)]
    pub repeats: Option<u32>,
    #[arg(long)]
    pub batch_size: Option<u32>,
    #[arg(long)]
    pub discard_file: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("object").required(true).args(["keyword", "nouns"]))]
pub struct PlanRandomArgs {
    #[arg(long)]
    pub scenes: PathBuf,
    #[arg(long)]
    pub image_root: Option<PathBuf>,
    #[arg(long)]
    pub scene_id: String,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 512)]
    pub margin: u32,
    #[arg(long, default_value_t = 10)]
    pub border_depth: u32,
    #[arg(long, default_value_t = 1600)]
    pub n_road: usize,
    #[arg(long, default_value_t = 400)]
    pub n_border: usize,
    #[arg(long, default_value_t = 100)]
    pub bbox_w: u32,
    #[arg(long, default_value_t = 130)]
    pub bbox_h: u32,
    /// Same single-concept keyword at every location.
    #[arg(long)]
    pub keyword: Option<String>,
    /// Fresh hybrid prompt per location from this noun list.
    #[arg(long)]
    pub nouns: Option<PathBuf>,
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InpaintArgs {
    #[arg(long)]
    pub jobs: PathBuf,
    #[arg(long)]
    pub service_url: Option<String>,
    #[arg(long)]
    pub concurrency: Option<usize>,
    #[arg(long)]
    pub max_retries: Option<u32>,
    /// Delay before the first retry, doubled for each further one.
    #[arg(long, default_value_t = 500)]
    pub retry_delay_ms: u64,
    #[arg(long, default_value_t = 300)]
    pub timeout_secs: u64,
    /// Generated images to exclude from the output annotations.
    #[arg(long)]
    pub discard_file: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    /// noise_white, noise_grey, pattern, removed or brightness_smooth.
    #[arg(long)]
    pub kind: String,
    /// Scenes to alter (all kinds except `removed`).
    #[arg(long)]
    pub scenes: Option<PathBuf>,
    #[arg(long)]
    pub image_root: Option<PathBuf>,
    /// Oval color: white, grey or R,G,B.
    #[arg(long)]
    pub color: Option<String>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Grid step when searching for a pattern source rectangle.
    #[arg(long, default_value_t = 8)]
    pub source_step: u32,
    /// Inpainting outcomes to pick removed images from.
    #[arg(long)]
    pub outcomes: Option<PathBuf>,
    #[arg(long)]
    pub discard_file: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub image_root: Option<PathBuf>,
    #[arg(long)]
    pub service_url: Option<String>,
    /// Name recorded for the detector behind the service.
    #[arg(long)]
    pub model: String,
    /// Prompt ids, comma separated (default p1..p5).
    #[arg(long, value_delimiter = ',')]
    pub prompts: Vec<String>,
    #[arg(long)]
    pub score_floor: Option<f64>,
    #[arg(long)]
    pub concurrency: Option<usize>,
    #[arg(long)]
    pub max_retries: Option<u32>,
    #[arg(long, default_value_t = 500)]
    pub retry_delay_ms: u64,
    #[arg(long, default_value_t = 300)]
    pub timeout_secs: u64,
    /// Prediction file to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Ground-truth annotation file.
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub image_root: Option<PathBuf>,
    /// Prediction files (repeatable).
    #[arg(long, required = true, num_args = 1..)]
    pub preds: Vec<PathBuf>,
    /// Dataset label in the tables (default: the ground-truth file stem).
    #[arg(long)]
    pub dataset_id: Option<String>,
    #[arg(long)]
    pub iou: Option<f64>,
    #[arg(long)]
    pub score_floor: Option<f64>,
    #[arg(long)]
    pub nms_iou: Option<f64>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct HeatmapArgs {
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub image_root: Option<PathBuf>,
    #[arg(long, required = true, num_args = 1..)]
    pub preds: Vec<PathBuf>,
    /// Restrict to one model (default: every model in the predictions).
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub prompt: Option<String>,
    /// recall, fn_count or both.
    #[arg(long, default_value = "both")]
    pub mode: String,
    #[arg(long)]
    pub score_floor: Option<f64>,
    #[arg(long)]
    pub iou: Option<f64>,
    #[arg(long)]
    pub nms_iou: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CorrelateArgs {
    /// `fn_vectors.json` files written by `eval` (repeatable).
    #[arg(long, required = true, num_args = 1..)]
    pub fn_vectors: Vec<PathBuf>,
    /// Keep only vectors with these labels.
    #[arg(long, value_delimiter = ',')]
    pub select: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// `results.csv` files to merge (repeatable).
    #[arg(long, num_args = 1..)]
    pub results: Vec<PathBuf>,
    /// Heatmap grid files to render (repeatable).
    #[arg(long, num_args = 1..)]
    pub grid: Vec<PathBuf>,
    #[arg(long, default_value = "both")]
    pub mode: String,
    #[arg(long)]
    pub out: PathBuf,
}

pub(crate) struct Ctx {
    pub argv: Vec<String>,
    pub resolver: Resolver,
}

impl Ctx {
    pub fn manifest(&self, stage: &str) -> manifest::Manifest {
        manifest::Manifest::new(stage, &self.argv)
    }

    /// Moves the resolved settings into the manifest.
    pub fn finish(&mut self, m: &mut manifest::Manifest) {
        m.config = std::mem::take(&mut self.resolver.resolved);
    }
}

/// Annotation paths are relative to `root`, or to the annotation file's
/// directory when no root is given.
pub(crate) fn image_root(annotations: &Path, root: Option<&Path>) -> PathBuf {
    match root {
        Some(r) => r.to_path_buf(),
        None => annotations
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .map_or_else(|| PathBuf::from("."), Path::to_path_buf),
    }
}

pub(crate) fn load_scenes(annotations: &Path, root: Option<&Path>) -> Result<Vec<SceneRecord>> {
    let root = image_root(annotations, root);
    let loaded = load_dataset(annotations, &root)
        .with_context(|| format!("loading {}", annotations.display()))?;
    Ok(loaded.scenes)
}

/// Annotation entries with absolute image and mask paths.
pub(crate) fn absolute_entries(scenes: &[SceneRecord], root: &Path) -> Result<Vec<AnnotationEntry>> {
    scenes
        .iter()
        .map(|s| {
            let mut e = AnnotationEntry::from(s);
            e.image = std::path::absolute(&s.image_path)?.display().to_string();
            if let Some(m) = &s.road_mask_file {
                e.road_mask = Some(std::path::absolute(root.join(m))?.display().to_string());
            }
            Ok(e)
        })
        .collect()
}

pub(crate) fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

pub(crate) fn write_jsonl<T: serde::Serialize>(items: &[T], path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item)?;
        buf.push(b'\n');
    }
    std::fs::write(path, buf).with_context(|| format!("writing {}", path.display()))
}

pub(crate) fn runtime() -> Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(level));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

fn dispatch(cli: Cli, argv: Vec<String>) -> Result<()> {
    let file = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let mut ctx = Ctx {
        argv,
        resolver: Resolver::new(file),
    };
    match &cli.command {
        Command::Ingest(a) => data::ingest(&mut ctx, a),
        Command::PlanHybrid(a) => data::plan_hybrid(&mut ctx, a),
        Command::PlanSingle(a) => data::plan_single(&mut ctx, a),
        Command::PlanRandom(a) => data::plan_random(&mut ctx, a),
        Command::Inpaint(a) => remote::inpaint(&mut ctx, a),
        Command::Probe(a) => probes::probe(&mut ctx, a),
        Command::Detect(a) => remote::detect(&mut ctx, a),
        Command::Eval(a) => analysis::eval(&mut ctx, a),
        Command::Heatmap(a) => analysis::heatmap(&mut ctx, a),
        Command::Correlate(a) => analysis::correlate(&mut ctx, a),
        Command::Report(a) => analysis::report(&mut ctx, a),
    }
}

/// Parses `args` (program name first) and runs the stage. Returns the
/// process exit status: 0 on success, 2 on usage errors, 1 when the stage
/// fails.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    init_logging(cli.verbose);
    let argv = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match dispatch(cli, argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
