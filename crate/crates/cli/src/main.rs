mod commands;
mod config;
mod util;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::{annot, evaluate, export, run, sync};
use crate::config::{Config, Overrides};
use crate::util::Failure;

/// Annotation, dataset and evaluation tools for multi-camera cattle video.
#[derive(Debug, Parser)]
#[command(name = "herdpipe", version, about, propagate_version = true)]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    /// More log output (repeat for debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a stream-to-wall-clock map from GPS telemetry CSV
    SyncFit(sync::FitArgs),
    /// Map frame indices from one camera to another
    SyncAlign(sync::AlignArgs),
    /// Parse and validate a WebVTT behaviour annotation file
    VttCheck(annot::VttCheckArgs),
    /// Densify keyframe boxes into per-frame boxes
    Interp(annot::InterpArgs),
    /// Tile behaviour cues into square crop windows
    PlanClips(annot::PlanClipsArgs),
    /// Write dense COCO ground truth from keyframe annotations
    ExportCoco(export::CocoArgs),
    /// Lay out (and optionally extract) a Kinetics-style clip dataset
    ExportKinetics(export::KineticsArgs),
    /// Assign items to train/val/test splits
    Split(export::SplitArgs),
    /// Detection AP/AR against COCO ground truth
    EvalDet(evaluate::DetArgs),
    /// Confusion matrix and accuracy of clip-level action labels
    EvalAction(evaluate::ActionArgs),
    /// Detections to behaviour events through an action scorer
    RunPipeline(run::PipelineArgs),
    /// Generate a synthetic scene with known ground truth
    Synth(run::SynthArgs),
    /// Render boxes, ids and behaviours onto still frames
    RenderOverlays(run::OverlayArgs),
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    let config = Config::load(&cli.overrides).map_err(Failure::Invalid)?;
    match cli.command {
        Command::SyncFit(a) => sync::fit(a, &config),
        Command::SyncAlign(a) => sync::align(a, &config),
        Command::VttCheck(a) => annot::vtt_check(a, &config),
        Command::Interp(a) => annot::interp(a, &config),
        Command::PlanClips(a) => annot::plan_clips(a, &config),
        Command::ExportCoco(a) => export::coco(a, &config),
        Command::ExportKinetics(a) => export::kinetics(a, &config),
        Command::Split(a) => export::split(a, &config),
        Command::EvalDet(a) => evaluate::det(a, &config),
        Command::EvalAction(a) => evaluate::action(a, &config),
        Command::RunPipeline(a) => run::pipeline(a, &config),
        Command::Synth(a) => run::synth(a, &config),
        Command::RenderOverlays(a) => run::overlays(a, &config),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}
