use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use omnimap_pipeline::config::PipelineConfig;
use omnimap_pipeline::stages::{self, Outputs};
use omnimap_pipeline::{PipelineError, Result};

#[derive(Parser)]
#[command(name = "omnimap", version, about = "Omnidirectional dense mapping for four-fisheye rigs")]
struct Cli {
    /// Configuration file (`section.key = value` lines).
    #[arg(short, long, global = true, default_value = "omnimap.conf")]
    config: PathBuf,
    /// Override a configuration key, e.g. `--set grid.width=320`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Worker threads for every parallel stage (0 = one per core).
    #[arg(short, long, global = true, env = "OMNIMAP_WORKERS")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Render the configured synthetic scene into `paths.dataset`.
    Synth,
    /// Sweep-stereo depth maps for the depth frames.
    Depth,
    /// Rig odometry over all frames.
    Odom,
    /// Loop detection and pose-graph correction.
    Loop,
    /// TSDF fusion of keyframe depth maps.
    Fuse,
    /// Marching-cubes mesh from the fused volume.
    Mesh,
    /// Depth-index error against ground-truth depth.
    EvalDepth,
    /// ATE and start-to-end error against the ground-truth trajectory.
    EvalTraj,
    /// Completeness and accuracy against the ground-truth mesh.
    EvalMesh,
    /// All stages, resuming from existing outputs.
    Run,
}

fn load(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::load(&cli.config)?;
    for o in &cli.overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| PipelineError::Config(format!("override '{o}' is not KEY=VALUE")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<()> {
    let cfg = load(cli)?;
    let out = Outputs::new(&cfg.paths.output);
    if !matches!(cli.command, Command::Synth | Command::Run) {
        cfg.check_inputs()?;
        std::fs::create_dir_all(&out.dir).map_err(|e| PipelineError::File { path: out.dir.clone(), source: e.into() })?;
    }
    let report = |r: omnimap_core::eval::MetricReport| print!("{}", r.to_text());
    stages::with_workers(cfg.workers, || -> Result<()> {
        match cli.command {
            Command::Synth => {
                let d = stages::run_synth(&cfg)?;
                println!("{} frames, {} depth frames written to {}", d.trajectory.len(), d.depth_frames.len(), cfg.paths.dataset.display());
            }
            Command::Depth => println!("{} depth maps computed", stages::run_depth(&cfg, &out)?),
            Command::Odom => stages::run_odometry(&cfg, &out)?,
            Command::Loop => println!("{} loop edges accepted", stages::run_loop(&cfg, &out)?),
            Command::Fuse => println!("{} keyframes fused", stages::run_fuse(&cfg, &out)?),
            Command::Mesh => println!("{} triangles", stages::run_mesh(&cfg, &out)?),
            Command::EvalDepth => report(stages::eval_depth(&cfg, &out)?),
            Command::EvalTraj => report(stages::eval_trajectory(&cfg, &out)?),
            Command::EvalMesh => report(stages::eval_mesh(&cfg, &out)?),
            Command::Run => {
                let r = stages::run_pipeline(&cfg)?;
                let names: Vec<&str> = r.ran.iter().map(|s| s.name()).collect();
                println!("stages run: {}", names.join(" "));
                report(r.metrics);
            }
        }
        Ok(())
    })?
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
