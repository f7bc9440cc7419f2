//! `spice` command-line interface.
//!
//! Exit codes: 0 success, 1 internal error, 2 usage or out-of-range input,
//! 3 I/O failure, 4 backend failure.

mod commands;
mod exit;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use spice_core::orchestrator::SweepAxis;
use spice_core::Resolution;

pub use exit::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "spice", version, about = "Iterative inpainting-based image editing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a single edit step and write the result plus a metadata sidecar.
    Edit(EditCmd),
    /// Run one edit per value of a hyperparameter and build a contact sheet.
    Sweep(SweepCmd),
    /// Measure an object's properties from a segmentation mask.
    Measure(MeasureCmd),
    /// Score case directories with direction and output similarity.
    ClipMetrics(ClipCmd),
    /// Serve the session HTTP API.
    Serve(ServeCmd),
    /// Serve the denoise and embed wire protocols with mock semantics.
    MockBackend(MockBackendCmd),
}

/// Inputs and hyperparameters shared by `edit` and `sweep`.
#[derive(Debug, Args)]
struct EditArgs {
    /// Image to edit. Optional when --project already holds a session.
    #[arg(long)]
    image: Option<PathBuf>,
    /// Mask PNG; small components are context dots.
    #[arg(long)]
    mask: PathBuf,
    /// RGBA color-patch layer, applied at --patch-opacity. Repeatable.
    #[arg(long = "hint")]
    hints: Vec<PathBuf>,
    /// RGBA reference-paste layer, applied at full opacity. Repeatable.
    #[arg(long = "reference")]
    references: Vec<PathBuf>,
    #[arg(long, default_value = "")]
    prompt: String,
    #[arg(long, default_value_t = 0.9)]
    strength: f64,
    #[arg(long, default_value_t = 5)]
    canny_steps: u32,
    #[arg(long, default_value_t = 25)]
    base_steps: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Working resolution as WxH.
    #[arg(long, default_value = "1216x832")]
    resolution: Resolution,
    #[arg(long, default_value_t = 0.8)]
    patch_opacity: f64,
    /// Soft-mask sigma as a fraction of the smaller working side.
    #[arg(long, default_value_t = 0.02)]
    blur_fraction: f64,
    /// Largest component area, in pixels, treated as a context dot.
    #[arg(long, default_value_t = 81)]
    dot_area_max: u32,
    /// Scale the extended region about its centre.
    #[arg(long)]
    context_scale: Option<f64>,
    /// Disable a pipeline component: context-dots, blur, hints or canny-stage. Repeatable.
    #[arg(long = "ablate")]
    ablate: Vec<String>,
    /// `mock` or the base URL of a denoise service.
    #[arg(long, env = "SPICE_BACKEND_URL", default_value = "mock")]
    backend: String,
}

#[derive(Debug, Args)]
struct EditCmd {
    #[command(flatten)]
    edit: EditArgs,
    /// Result PNG.
    #[arg(long)]
    out: PathBuf,
    /// Metadata JSON; defaults to the output path with a .json extension.
    #[arg(long)]
    meta: Option<PathBuf>,
    /// Project directory to append the step to (created from --image if absent).
    #[arg(long)]
    project: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepCmd {
    #[command(flatten)]
    edit: EditArgs,
    /// strength, canny_steps or context_scale.
    #[arg(long)]
    axis: SweepAxis,
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    /// Directory receiving per-cell PNGs, contact.png and sweep.json.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long, default_value_t = 128)]
    thumb_height: u32,
    /// Make backend calls at this denoising strength fail.
    #[arg(long, hide = true)]
    fail_at_strength: Option<f64>,
}

#[derive(Debug, Args)]
struct MeasureCmd {
    /// Segmentation mask PNG.
    #[arg(long)]
    seg: PathBuf,
    #[arg(long)]
    image: PathBuf,
    /// Specified properties as JSON; without it only measurements are reported.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Report JSON; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ClipCmd {
    /// Directory with one sub-directory per case.
    #[arg(long)]
    cases: PathBuf,
    /// `mock` or the base URL of an embedding service.
    #[arg(long, env = "SPICE_EMBEDDER_URL", default_value = "mock")]
    embedder: String,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write per-case rows as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ServeCmd {
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, env = "SPICE_BACKEND_URL", default_value = "mock")]
    backend_url: String,
    #[arg(long, default_value = "projects")]
    project_root: PathBuf,
    /// Maximum concurrently running steps; defaults to the CPU count.
    #[arg(long)]
    parallelism: Option<usize>,
}

#[derive(Debug, Args)]
struct MockBackendCmd {
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 8090)]
    port: u16,
}

fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_env("SPICE_LOG").unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Edit(cmd) => commands::edit(cmd),
        Command::Sweep(cmd) => commands::sweep(cmd),
        Command::Measure(cmd) => commands::measure(cmd),
        Command::ClipMetrics(cmd) => commands::clip_metrics(cmd),
        Command::Serve(cmd) => commands::serve(cmd),
        Command::MockBackend(cmd) => commands::mock_backend(cmd),
    };
    if let Err(e) = result {
        eprintln!("error: {:#}", e.error);
        std::process::exit(e.code);
    }
}
