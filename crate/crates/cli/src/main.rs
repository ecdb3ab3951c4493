mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::*;
use config::ConfigFile;

/// Synthetic apple-detection datasets: generate, annotate, split, export
/// and evaluate.
#[derive(Debug, Parser)]
#[command(name = "synthdet", version)]
struct Cli {
    /// TOML file with one table per subcommand; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Project store root (defaults to $SYNTHDET_STORE, then ./synthdet-store).
    #[arg(long, global = true)]
    store: Option<PathBuf>,
    /// More log output; repeat for more.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render or request images for a generation job.
    Generate(GenerateArgs),
    /// Detect or import boxes for a directory of images and filter them.
    Annotate(AnnotateArgs),
    /// Assign manifest images to train and val.
    Split(SplitArgs),
    /// Write a manifest as YOLO and/or COCO.
    Export(ExportArgs),
    /// Score a detections file against ground truth.
    Eval(EvalArgs),
    /// Repeated candidate-versus-baseline comparison.
    Experiment(ExperimentArgs),
    /// Run the diffusion kernel property suite.
    KernelCheck(KernelCheckArgs),
    /// Serve the REST API over the store.
    Serve(ServeArgs),
    /// Run generate, annotate, split and export as one resumable run.
    Pipeline(PipelineArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => tracing::Level::WARN,
        1 => tracing::Level::INFO,
        _ => tracing::Level::DEBUG,
    };
    tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .init();

    let result = (|| {
        let cfg = cli.config.as_deref().map(ConfigFile::load).transpose()?;
        let ctx = Context {
            cfg: cfg.as_ref(),
            store: cli.store.clone(),
        };
        match &cli.command {
            Command::Generate(a) => generate(&ctx, a),
            Command::Annotate(a) => annotate(&ctx, a),
            Command::Split(a) => split(&ctx, a),
            Command::Export(a) => export(&ctx, a),
            Command::Eval(a) => eval(&ctx, a),
            Command::Experiment(a) => experiment(&ctx, a),
            Command::KernelCheck(a) => kernel_check(&ctx, a),
            Command::Serve(a) => serve(&ctx, a),
            Command::Pipeline(a) => pipeline(&ctx, a),
        }
    })();
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
