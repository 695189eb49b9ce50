use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use flocktrack::config::{PipelineConfig, StageRange};
use flocktrack::evaluation::EvalConfig;
use flocktrack::pipeline::{self, OracleInputs, PipelineError};

/// Multi-camera 3D flock tracking: simulation, reconstruction, tracking,
/// re-tracking, evaluation and ethogram extraction.
#[derive(Parser)]
#[command(name = "flocktrack", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// TOML configuration file; every parameter has a default.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a parameter, e.g. `--set tracker.gate=0.3` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<PipelineConfig, PipelineError> {
        let text = match &self.config {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| PipelineError::Config(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        PipelineConfig::from_toml_with(&text, &self.overrides).map_err(PipelineError::Config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a contiguous range of stages from one configuration file.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// `first:last` or a single stage name.
        #[arg(long, default_value = "simulate:ethogram")]
        stages: String,
        /// Output directory; overrides the config file and `FLOCKTRACK_OUTPUT_DIR`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Generate a synthetic scene and render detections.
    Simulate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Triangulate and cluster detections into per-frame 3D centers.
    Reconstruct {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        calibration: PathBuf,
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Link clusters into smoothed tracklets.
    Track {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        clusters: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Join tracklets into tracks and write the hypothesis trees.
    Retrack {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        tracklets: PathBuf,
        #[arg(long)]
        tracks_out: PathBuf,
        #[arg(long)]
        trees_out: PathBuf,
    },
    /// Score tracks against a WILD manifest.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        tracks: PathBuf,
        /// Also score every hypothesis-tree path.
        #[arg(long, requires_all = ["trees", "tracklets"])]
        oracle: bool,
        #[arg(long)]
        trees: Option<PathBuf>,
        #[arg(long)]
        tracklets: Option<PathBuf>,
        /// Score head points instead of head-tail midpoints.
        #[arg(long)]
        head_scoring: bool,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Interactions, pairwise matrices, pair bonds and transitions.
    Ethogram {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Identified positions, as written by the simulator (`ground_truth.csv`).
        #[arg(long)]
        timelines: PathBuf,
        #[arg(long)]
        songs: PathBuf,
        #[arg(long)]
        birds: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn output_dir(explicit: Option<PathBuf>, cfg: &mut PipelineConfig) -> PathBuf {
    cfg.apply_env();
    if let Some(p) = explicit {
        cfg.paths.output_dir = p;
    }
    cfg.paths.output_dir.clone()
}

fn pool(cfg: &PipelineConfig) -> Result<rayon::ThreadPool, PipelineError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| PipelineError::Config(format!("worker pool: {e}")))
}

fn execute(cmd: Command) -> Result<(), PipelineError> {
    match cmd {
        Command::Run { cfg, stages, output } => {
            let mut c = cfg.load()?;
            output_dir(output, &mut c);
            let range: StageRange = stages.parse().map_err(PipelineError::Config)?;
            let m = pipeline::run(&c, range)?;
            println!(
                "{} stage(s) written to {} (config {})",
                m.stages.len(),
                c.paths.output_dir.display(),
                &m.config_sha256[..12]
            );
        }
        Command::Simulate { cfg, out } => {
            let mut c = cfg.load()?;
            let dir = output_dir(out, &mut c);
            pool(&c)?.install(|| pipeline::simulate(&c.simulator, c.rng_seed, &dir))?;
        }
        Command::Reconstruct { cfg, calibration, detections, out } => {
            let c = cfg.load()?;
            pool(&c)?.install(|| {
                pipeline::reconstruct(&calibration, &detections, &c.reconstruction, c.rng_seed, &out)
            })?;
        }
        Command::Track { cfg, clusters, out } => {
            let c = cfg.load()?;
            pipeline::track(&clusters, &c.tracker, &out)?;
        }
        Command::Retrack { cfg, tracklets, tracks_out, trees_out } => {
            let c = cfg.load()?;
            pipeline::retrack(&tracklets, &c.retracking, &tracks_out, &trees_out)?;
        }
        Command::Evaluate { manifest, tracks, oracle, trees, tracklets, head_scoring, out } => {
            let oracle_inputs = match (oracle, &trees, &tracklets) {
                (true, Some(t), Some(l)) => Some(OracleInputs { trees: t.as_path(), tracklets: l.as_path() }),
                _ => None,
            };
            let report = pipeline::evaluate(
                &manifest,
                &tracks,
                oracle_inputs,
                &EvalConfig { head_scoring },
                &out,
            )?;
            print!("{}", report.greedy.to_table("Greedy re-tracking"));
            if let Some(o) = &report.oracle {
                println!();
                print!("{}", o.to_table("Oracle matching"));
            }
        }
        Command::Ethogram { cfg, timelines, songs, birds, out } => {
            let c = cfg.load()?;
            pipeline::ethogram(&timelines, &songs, &birds, c.simulator.scene.fps, &c.ethogram, Path::new(&out))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("flocktrack: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
