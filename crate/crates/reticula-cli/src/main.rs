//! Command-line front end for the reticula pipeline.
//!
//! Each subcommand maps to one stage and leaves its artifact on disk, so a
//! full run can also be reproduced one stage at a time. `pipeline` calls
//! the same stage functions in sequence; its outputs are byte-identical to
//! the composed commands. All tunables come from a single JSON config
//! (every key optional; see the library's config module for defaults), and
//! output never depends on `--threads`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use log::info;

use reticula::eval::ConfusionCounts;
use reticula::{
    detect_volume, filter_volume, generate_phantom, load_stack, match_annotations,
    read_annotations, save_stack, track_volume, write_annotations, write_report, PhantomSpec,
    PipelineConfig, PipelineParams,
};

#[derive(Parser)]
#[command(
    name = "reticula",
    about = "Detect and track axoplasmic reticula in serial-section EM stacks",
    version
)]
struct Cli {
    /// Cap the worker thread count (default: one per core). Results are
    /// identical for any value.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Bilaterally filter a stack (and optionally Laplacian-sharpen it)
    Filter {
        /// Input stack manifest (stack.json)
        in_manifest: PathBuf,
        /// Directory for the filtered stacks
        out_dir: PathBuf,
        /// Pipeline config JSON; omit for defaults
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also write the Laplacian-sharpened stack
        #[arg(long)]
        sharpen: bool,
    },
    /// Grow dark regions on both filtered stacks and merge the passes
    Detect {
        /// Bilateral stack manifest
        bilateral_manifest: PathBuf,
        /// Sharpened stack manifest
        sharpened_manifest: PathBuf,
        /// Output annotations JSON
        out_annotations: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Confirm, rescue, or delete components across slices and link tracks
    Track {
        /// Bilateral stack manifest (rescue growth re-reads the images)
        bilateral_manifest: PathBuf,
        /// Annotations to track (typically the detect output)
        in_annotations: PathBuf,
        /// Output annotations JSON with statuses and tracks
        out_annotations: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Score predicted annotations against ground truth
    Eval {
        /// Output report JSON
        out_report: PathBuf,
        /// Predicted annotations (requires --truth)
        #[arg(long, requires = "truth", conflicts_with = "counts")]
        pred: Option<PathBuf>,
        /// Ground-truth annotations
        #[arg(long, requires = "pred")]
        truth: Option<PathBuf>,
        #[arg(long, conflicts_with = "counts")]
        config: Option<PathBuf>,
        /// Skip matching; compute rates from known tp/fp/fn counts
        #[arg(long, num_args = 3, value_names = ["TP", "FP", "FN"])]
        counts: Option<Vec<u64>>,
    },
    /// Generate a synthetic stack with exact ground truth
    Phantom {
        /// Phantom spec JSON
        spec: PathBuf,
        /// Directory for the stack and its truth.json
        out_dir: PathBuf,
    },
    /// Run filter, detect, track, and optionally eval in one go
    Pipeline {
        /// Input stack manifest (stack.json)
        in_manifest: PathBuf,
        /// Directory for every stage artifact
        out_dir: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Ground-truth annotations; when given, a report.json is written
        #[arg(long)]
        truth: Option<PathBuf>,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("initializing the worker pool")?;
    }

    match cli.command {
        Command::Filter {
            in_manifest,
            out_dir,
            config,
            sharpen,
        } => cmd_filter(
            &in_manifest,
            &out_dir,
            &load_params(config.as_deref())?,
            sharpen,
        ),
        Command::Detect {
            bilateral_manifest,
            sharpened_manifest,
            out_annotations,
            config,
        } => cmd_detect(
            &bilateral_manifest,
            &sharpened_manifest,
            &out_annotations,
            &load_params(config.as_deref())?,
        ),
        Command::Track {
            bilateral_manifest,
            in_annotations,
            out_annotations,
            config,
        } => cmd_track(
            &bilateral_manifest,
            &in_annotations,
            &out_annotations,
            &load_params(config.as_deref())?,
        ),
        Command::Eval {
            out_report,
            pred,
            truth,
            config,
            counts,
        } => match (pred, truth, counts) {
            (Some(pred), Some(truth), None) => {
                cmd_eval(&pred, &truth, &out_report, &load_params(config.as_deref())?)
            }
            (None, None, Some(counts)) => {
                let c = ConfusionCounts {
                    tp: counts[0],
                    fp: counts[1],
                    fn_: counts[2],
                };
                write_report(&out_report, &c)?;
                info!(
                    "report written to {} (tp {} fp {} fn {})",
                    out_report.display(),
                    c.tp,
                    c.fp,
                    c.fn_
                );
                Ok(())
            }
            _ => bail!("eval needs either --pred and --truth, or --counts TP FP FN"),
        },
        Command::Phantom { spec, out_dir } => cmd_phantom(&spec, &out_dir),
        Command::Pipeline {
            in_manifest,
            out_dir,
            config,
            truth,
        } => cmd_pipeline(
            &in_manifest,
            truth.as_deref(),
            &out_dir,
            &load_params(config.as_deref())?,
        ),
    }
}

fn load_params(config: Option<&Path>) -> Result<PipelineParams> {
    let config = match config {
        Some(path) => PipelineConfig::from_file(path)?,
        None => PipelineConfig::default(),
    };
    Ok(config.params()?)
}

/// Filters a stack into `out_dir/bilateral` and, when asked, also writes
/// `out_dir/sharpened`.
fn cmd_filter(
    in_manifest: &Path,
    out_dir: &Path,
    params: &PipelineParams,
    sharpen: bool,
) -> Result<()> {
    let volume = load_stack(in_manifest)?;
    info!(
        "filtering {}x{}x{} (sigma_s {}, sigma_r {}, radius {})",
        volume.width(),
        volume.height(),
        volume.depth(),
        params.bilateral.sigma_s(),
        params.bilateral.sigma_r(),
        params.bilateral.radius()
    );
    let (bilateral, sharpened) = filter_volume(&volume, &params.bilateral, sharpen);
    save_stack(&bilateral, &out_dir.join("bilateral"))?;
    if let Some(sharpened) = sharpened {
        save_stack(&sharpened, &out_dir.join("sharpened"))?;
    }
    Ok(())
}

fn cmd_detect(
    bilateral_manifest: &Path,
    sharpened_manifest: &Path,
    out_annotations: &Path,
    params: &PipelineParams,
) -> Result<()> {
    let bilateral = load_stack(bilateral_manifest)?;
    let sharpened = load_stack(sharpened_manifest)?;
    let set = detect_volume(
        &bilateral,
        &sharpened,
        &params.grow_bilateral,
        &params.grow_laplacian,
    )?;
    info!("detected {} components", set.iter().count());
    write_annotations(out_annotations, &set, &[])?;
    Ok(())
}

fn cmd_track(
    bilateral_manifest: &Path,
    in_annotations: &Path,
    out_annotations: &Path,
    params: &PipelineParams,
) -> Result<()> {
    let bilateral = load_stack(bilateral_manifest)?;
    let (set, _) = read_annotations(in_annotations)?;
    let before = set.iter().count();
    let (set, tracks) = track_volume(&bilateral, set, &params.grow_bilateral, &params.track)?;
    info!(
        "tracking kept {} of {} components in {} tracks",
        set.iter()
            .filter(|c| c.status() != reticula::Status::Deleted)
            .count(),
        before,
        tracks.len()
    );
    write_annotations(out_annotations, &set, &tracks)?;
    Ok(())
}

fn cmd_eval(pred: &Path, truth: &Path, out_report: &Path, params: &PipelineParams) -> Result<()> {
    let (pred, _) = read_annotations(pred)?;
    let (truth, _) = read_annotations(truth)?;
    let counts = match_annotations(&pred, &truth, &params.eval)?;
    write_report(out_report, &counts)?;
    info!(
        "report written to {} (tp {} fp {} fn {})",
        out_report.display(),
        counts.tp,
        counts.fp,
        counts.fn_
    );
    Ok(())
}

/// Writes the generated stack (slices + stack.json) and its exact truth
/// annotations (truth.json) into `out_dir`.
fn cmd_phantom(spec: &Path, out_dir: &Path) -> Result<()> {
    let spec = PhantomSpec::from_file(spec)?;
    let (volume, truth, tracks) = generate_phantom(&spec)?;
    save_stack(&volume, out_dir)?;
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    write_annotations(&out_dir.join("truth.json"), &truth, &tracks)?;
    info!(
        "phantom {}x{}x{} with {} truth components written to {}",
        spec.width,
        spec.height,
        spec.depth,
        truth.iter().count(),
        out_dir.display()
    );
    Ok(())
}

/// The full run: identical artifacts to invoking filter (with --sharpen),
/// detect, track, and eval by hand with the same config.
fn cmd_pipeline(
    in_manifest: &Path,
    truth: Option<&Path>,
    out_dir: &Path,
    params: &PipelineParams,
) -> Result<()> {
    cmd_filter(in_manifest, out_dir, params, true)?;
    let bilateral_manifest = out_dir.join("bilateral").join("stack.json");
    let sharpened_manifest = out_dir.join("sharpened").join("stack.json");
    let detected = out_dir.join("annotations_detect.json");
    cmd_detect(&bilateral_manifest, &sharpened_manifest, &detected, params)?;
    let tracked = out_dir.join("annotations.json");
    cmd_track(&bilateral_manifest, &detected, &tracked, params)?;
    if let Some(truth) = truth {
        cmd_eval(&tracked, truth, &out_dir.join("report.json"), params)?;
    }
    Ok(())
}
