//! `scene-sampler`: coverage-based frame sampling, position-encoded frame
//! embeddings, grounding evaluation and timing benchmarks over RGB-D scenes.

mod bench;
mod config;
mod encode;
mod ground_eval;
mod sample;
mod scenes;
mod synth;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Overrides, Settings};
use scenes::Status;

#[derive(Debug, Parser)]
#[command(name = "scene-sampler", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML file with defaults for any of the global flags (kebab-case keys)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Select frames per scene; writes <out>/<scene>/sampling.json and voxels.v3dc
    Sample {
        /// Scene ids under --root (default: all)
        #[arg(long = "scene")]
        scenes: Vec<String>,
        /// Write elapsed_ms as 0 so repeated runs are byte-identical
        #[arg(long)]
        omit_timings: bool,
    },
    /// Encode selected frames; writes <out>/<scene>/embeddings/<frame>.bin + .json
    Encode {
        #[arg(long = "scene")]
        scenes: Vec<String>,
        /// Encode every frame instead of the ones in sampling.json
        #[arg(long)]
        all_frames: bool,
    },
    /// Score grounding predictions; writes <out>/metrics.json
    GroundEval {
        /// JSON-lines predictions {query_id, predicted, target}
        #[arg(long)]
        pred: Option<PathBuf>,
        /// JSON-lines targets {query_id, target}, joined to --pred by query_id
        #[arg(long, requires = "pred")]
        target: Option<PathBuf>,
        /// Instead of reading files, run position-only grounding on N synthetic scenes
        #[arg(long, conflicts_with = "pred")]
        oracle_scenes: Option<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = scene_sampler::grounding::DEFAULT_IOU_THRESHOLDS)]
        thresholds: Vec<f64>,
    },
    /// Time voxelization, selection and encoding; writes <out>/bench.json
    Bench {
        #[arg(long = "scene")]
        scenes: Vec<String>,
        /// Synthetic scenes to generate when --root is not given
        #[arg(long, default_value_t = 10)]
        count: usize,
        /// Frames per synthetic scene
        #[arg(long, default_value_t = 300)]
        frames: usize,
    },
    /// Write synthetic scenes in the on-disk scene layout under --out
    Synth {
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 120)]
        frames: usize,
        #[arg(long, default_value_t = 8)]
        objects: usize,
        #[arg(long, default_value_t = 80)]
        width: usize,
        #[arg(long, default_value_t = 60)]
        height: usize,
    },
}

fn run(cli: Cli) -> scene_sampler::Result<Status> {
    let s = Settings::resolve(cli.overrides, cli.config.as_deref())?;
    if let Some(n) = s.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| scene_sampler::Error::FatalConfig(format!("thread pool: {e}")))?;
    }
    log::debug!("settings: {s:?}");
    match cli.command {
        Command::Sample { scenes, omit_timings } => sample::run(&s, &scenes, omit_timings),
        Command::Encode { scenes, all_frames } => encode::run(&s, &scenes, all_frames),
        Command::GroundEval {
            pred,
            target,
            oracle_scenes,
            thresholds,
        } => ground_eval::run(
            &s,
            &ground_eval::EvalArgs {
                pred: pred.as_deref(),
                target: target.as_deref(),
                oracle_scenes,
                thresholds: &thresholds,
            },
        ),
        Command::Bench { scenes, count, frames } => bench::run(
            &s,
            &bench::BenchArgs {
                scenes: &scenes,
                count,
                frames,
            },
        ),
        Command::Synth {
            count,
            frames,
            objects,
            width,
            height,
        } => synth::run(
            &s,
            &synth::SynthArgs {
                count,
                frames,
                objects,
                width,
                height,
            },
        ),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SCENE_SAMPLER_LOG", "warn")).init();
    // clap exits with 2 on usage errors, which callers would read as "partial"
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let status = run(cli).unwrap_or_else(|e| {
        eprintln!("error: {e}");
        Status::Fatal
    });
    ExitCode::from(status.code() as u8)
}
