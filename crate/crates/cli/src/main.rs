//! `wildface` — pipeline front-end: orientation labeling, head cropping,
//! quality statistics, split-ratio tables, metric evaluation, and model
//! self-verification.
//!
//! Exit codes are a stable scripting contract: 0 on success, 1 when a
//! verification or metric check fails, 2 on usage or IO errors.

mod commands;
mod imageio;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use wildface_core::geometry::BodyHeightSource;

/// How a command run can fail, mapped onto the exit-code contract.
pub enum Failure {
    /// Bad flags, unreadable inputs, malformed files — exit code 2.
    Usage(anyhow::Error),
    /// Inputs were fine but a verification or metric check failed — exit 1.
    Check(String),
}

impl From<anyhow::Error> for Failure {
    fn from(err: anyhow::Error) -> Self {
        Failure::Usage(err)
    }
}

pub type CmdResult = Result<(), Failure>;

#[derive(Parser)]
#[command(name = "wildface", version, about = "Face/body fusion pipeline tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum BodyHeightArg {
    /// Use the full image height as the body silhouette height.
    Image,
    /// Use the vertical keypoint extent instead.
    Keypoints,
}

impl From<BodyHeightArg> for BodyHeightSource {
    fn from(arg: BodyHeightArg) -> Self {
        match arg {
            BodyHeightArg::Image => BodyHeightSource::ImageHeight,
            BodyHeightArg::Keypoints => BodyHeightSource::KeypointExtent,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Label every posed image as frontal, sideways, or backside.
    Orient {
        /// Pose estimator output (JSON array of keypoint records).
        #[arg(long)]
        poses: PathBuf,
        /// Orientation CSV to write.
        #[arg(long)]
        out: PathBuf,
        /// Keypoint confidence cutoff in [0, 1].
        #[arg(long, default_value_t = 0.05)]
        conf_threshold: f64,
    },
    /// Crop head boxes from frontal images and write the metadata table.
    Heads {
        /// Pose estimator output (JSON array of keypoint records).
        #[arg(long)]
        poses: PathBuf,
        /// Directory holding the images named by their pose image ids.
        #[arg(long)]
        images: PathBuf,
        /// Directory for the crops and `metadata.csv`.
        #[arg(long)]
        out: PathBuf,
        /// Keypoint confidence cutoff in [0, 1].
        #[arg(long, default_value_t = 0.05)]
        conf_threshold: f64,
        /// Body silhouette height source for the 2/9 head-box rule.
        #[arg(long, value_enum, default_value_t = BodyHeightArg::Image)]
        body_height: BodyHeightArg,
    },
    /// Resolution / luminosity / blurriness statistics per image directory.
    Quality {
        /// Image directories; each becomes one named group.
        #[arg(long, required = true)]
        images: Vec<PathBuf>,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = ReportFormat::Csv)]
        format: ReportFormat,
    },
    /// Split-size and frontal-share ratio row for one dataset.
    Ratios {
        /// Dataset name for the report row.
        #[arg(long)]
        dataset: String,
        /// Original train manifest CSV (image_id, gender).
        #[arg(long)]
        train: PathBuf,
        /// Original test manifest CSV.
        #[arg(long)]
        test: PathBuf,
        /// Frontal-subset train manifest CSV.
        #[arg(long)]
        frontal_train: PathBuf,
        /// Frontal-subset test manifest CSV.
        #[arg(long)]
        frontal_test: PathBuf,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = ReportFormat::Csv)]
        format: ReportFormat,
    },
    /// Mean accuracy of a predictions file, optionally with error reduction.
    Ma {
        /// Predictions CSV with header `image_id,prediction,label`.
        #[arg(long)]
        predictions: PathBuf,
        /// Baseline mean accuracy in percent for the error-reduction figure.
        #[arg(long)]
        baseline: Option<f64>,
        #[arg(long, value_enum, default_value_t = ReportFormat::Csv)]
        format: ReportFormat,
    },
    /// Verify gradients and model invariants; exit 0 only if all pass.
    Famcheck {
        /// Feature dimensions as CxHxW.
        #[arg(long, default_value = "8x4x3")]
        dims: String,
        /// Attention bottleneck divisor; defaults to the largest divisor
        /// of C that is at most 16.
        #[arg(long)]
        reduction: Option<usize>,
        /// Seed for parameters, inputs, and invariant sweeps.
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Finite-difference step size.
        #[arg(long, default_value_t = 1e-4)]
        step: f64,
        /// Route non-frontal images through the fused head's parameters.
        #[arg(long)]
        shared_head: bool,
        /// Corrupt one gradient coordinate to prove the check can fail.
        #[arg(long)]
        corrupt: bool,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Applies `WILDFACE_WORKERS` to the global worker pool. Unset means the
/// library default; anything but a positive integer is a usage error.
fn configure_workers() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("WILDFACE_WORKERS") else {
        return Ok(());
    };
    let workers: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .with_context(|| format!("WILDFACE_WORKERS must be a positive integer, got `{raw}`"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build_global()
        .context("initializing the worker pool")?;
    Ok(())
}

fn run(cli: Cli) -> CmdResult {
    configure_workers()?;
    match cli.command {
        Command::Orient { poses, out, conf_threshold } => {
            commands::orient::run(&poses, &out, conf_threshold)
        }
        Command::Heads { poses, images, out, conf_threshold, body_height } => {
            commands::heads::run(&poses, &images, &out, conf_threshold, body_height.into())
        }
        Command::Quality { images, out, format } => {
            commands::quality::run(&images, out.as_deref(), format)
        }
        Command::Ratios { dataset, train, test, frontal_train, frontal_test, out, format } => {
            commands::ratios::run(
                &dataset,
                [&train, &test, &frontal_train, &frontal_test],
                out.as_deref(),
                format,
            )
        }
        Command::Ma { predictions, baseline, format } => {
            commands::ma::run(&predictions, baseline, format)
        }
        Command::Famcheck { dims, reduction, seed, step, shared_head, corrupt, out } => {
            commands::famcheck::run(&dims, reduction, seed, step, shared_head, corrupt, out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(message)) => {
            eprintln!("{message}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(err)) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}
