//! `vgscene`: evaluation, dataset preparation and geometry utilities.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use config::FileConfig;
use vgscene_core::Report;

#[derive(Debug, Parser)]
#[command(name = "vgscene", version, about = "Scorers and data preparation for video-based 3D scene understanding")]
struct Cli {
    /// TOML file with default values for any flag.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Worker threads (defaults to the available cores).
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    /// Write the JSON report here and the text report next to it (`.txt`).
    /// Without it the text report goes to standard output.
    #[arg(long, global = true, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Print the JSON report instead of the text one when `--out` is absent.
    #[arg(long, global = true)]
    json: bool,
    /// Seed for every random draw.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Accuracy at IoU thresholds for single-object grounding answers.
    EvalGrounding(GroundingArgs),
    /// Class-averaged precision, recall and F1 for detection answers.
    EvalDetect(DetectArgs),
    /// IoU-gated CIDEr-D, BLEU-4 and ROUGE-L for object captions.
    EvalCaption(CaptionArgs),
    /// Sample frames, pick each object's best frame, rebase boxes.
    PrepFrames(PrepArgs),
    /// Run the token-fusion simulator and report shapes and gradient checks.
    FuseDemo(FuseArgs),
    /// IoU of two 9-number boxes.
    #[command(allow_negative_numbers = true)]
    Iou {
        /// x y z w h d yaw pitch roll of the first box, then of the second.
        #[arg(num_args = 18, required = true)]
        values: Vec<f64>,
    },
    /// Print the prompt text for a task.
    Prompt(PromptArgs),
}

#[derive(Debug, Args)]
pub struct GroundingArgs {
    /// Predictions, one `{"id", "response"}` object per line.
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// Ground-truth samples (JSON lines).
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Optional per-sample proposal boxes (JSON lines).
    #[arg(long)]
    pub proposals: Option<PathBuf>,
    /// Comma-separated IoU thresholds.
    #[arg(long, value_delimiter = ',')]
    pub iou_thresh: Option<Vec<f64>>,
    /// Report unrefined accuracy as the headline even when proposals exist.
    #[arg(long)]
    pub no_refine: bool,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// Ground-truth bundle (JSON).
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(long)]
    pub iou_thresh: Option<f64>,
    /// Drop malformed entries with a warning (default).
    #[arg(long, conflicts_with = "strict")]
    pub lenient: bool,
    /// Fail on the first malformed answer.
    #[arg(long)]
    pub strict: bool,
    /// JSON object mapping label aliases to canonical class names.
    #[arg(long)]
    pub aliases: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CaptionArgs {
    /// Objects with boxes, references and (optionally) candidates.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Candidate captions overriding those in `--gt`.
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// Minimum proposal IoU for a caption to count.
    #[arg(long)]
    pub gate: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Policy {
    /// A fixed number of evenly spaced frames.
    Uniform,
    /// Frames at a target rate, clamped to a count range.
    Fps,
}

#[derive(Debug, Args)]
pub struct PrepArgs {
    /// Scene directories; may be repeated.
    #[arg(long = "scene")]
    pub scenes: Vec<PathBuf>,
    #[arg(long, value_enum)]
    pub policy: Option<Policy>,
    /// Frame count for the uniform policy.
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub target_fps: Option<f64>,
    #[arg(long)]
    pub min_k: Option<usize>,
    #[arg(long)]
    pub max_k: Option<usize>,
    /// Minimum IoU for a target to match an annotated instance.
    #[arg(long)]
    pub match_iou: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub patch: Option<usize>,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Number of seeded MLPs to gradient-check.
    #[arg(long)]
    pub configs: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PromptKind {
    Grounding,
    Captioning,
    Detection,
}

#[derive(Debug, Args)]
pub struct PromptArgs {
    #[arg(value_enum)]
    pub task: PromptKind,
    /// Object description for grounding.
    #[arg(long)]
    pub query: Option<String>,
    /// Object center for captioning.
    #[arg(long, num_args = 3, allow_negative_numbers = true)]
    pub center: Option<Vec<f64>>,
    #[arg(long, default_value_t = 4)]
    pub frames: usize,
}

fn write_report(report: &Report, out: Option<&Path>, json: bool) -> Result<()> {
    match out {
        Some(path) => {
            std::fs::write(path, report.to_json()).with_context(|| format!("writing {}", path.display()))?;
            let text_path = path.with_extension("txt");
            std::fs::write(&text_path, report.to_text()).with_context(|| format!("writing {}", text_path.display()))?;
            log::info!("wrote {} and {}", path.display(), text_path.display());
        }
        None if json => print!("{}", report.to_json()),
        None => print!("{}", report.to_text()),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let file = FileConfig::load(cli.config.as_deref())?;
    let jobs = cli
        .jobs
        .or(file.jobs)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if jobs == 0 {
        anyhow::bail!("--jobs must be at least 1");
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build().context("starting worker pool")?;
    let seed = cli.seed.or(file.seed).unwrap_or(0);
    let out = cli.out.clone().or_else(|| file.out.clone());

    let report = pool.install(|| -> Result<Option<Report>> {
        Ok(match cli.command {
            Command::EvalGrounding(a) => Some(commands::eval_grounding(a, &file)?),
            Command::EvalDetect(a) => Some(commands::eval_detect(a, &file)?),
            Command::EvalCaption(a) => Some(commands::eval_caption(a, &file)?),
            Command::PrepFrames(a) => Some(commands::prep_frames(a, &file)?),
            Command::FuseDemo(a) => Some(commands::fuse_demo(a, &file, seed)?),
            Command::Iou { values } => {
                println!("{}", commands::iou(&values)?);
                None
            }
            Command::Prompt(a) => {
                println!("{}", commands::prompt(a)?);
                None
            }
        })
    })?;
    if let Some(report) = report {
        write_report(&report, out.as_deref(), cli.json)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
