use std::path::{Path, PathBuf};
use std::process::ExitCode;

use avspot::experiment::{
    cmd_desk, cmd_eval, cmd_eval_spot, cmd_gradcheck, cmd_spot, cmd_spot_grid, cmd_synth, cmd_train, ExperimentConfig,
};
use avspot::Error;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "avspot", version, about = "Audio-visual action classification and spotting")]
struct Cli {
    /// Worker threads for internal parallelism.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    /// Replace the contents of an existing, non-empty output directory.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides `out_dir` of the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `seed` of the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset into `data.dir`.
    Synth(Common),
    /// Train the configured model; writes <out>/train/.
    Train(Common),
    /// Classification report on the test split; writes <out>/eval/.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Defaults to <out>/train/model.ckpt.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Spotting candidates on the test split; writes <out>/spot/.
    Spot {
        #[command(flatten)]
        common: Common,
        /// Defaults to <out>/train/model.ckpt.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// mAP(delta) curve and Average-mAP; writes <out>/eval-spot/.
    EvalSpot {
        #[command(flatten)]
        common: Common,
        /// Defaults to <out>/spot/candidates.csv.
        #[arg(long)]
        candidates: Option<PathBuf>,
    },
    /// Average-mAP of each checkpoint under every extraction method.
    SpotGrid {
        #[command(flatten)]
        common: Common,
        #[arg(long, required = true)]
        checkpoint: Vec<PathBuf>,
    },
    /// Finite-difference gradient checks; writes <out>/gradcheck/.
    Gradcheck {
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Full in-memory desk experiment; writes <out>/desk/.
    Desk(Common),
}

fn load(common: &Common) -> avspot::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print<T: serde::Serialize>(value: &T) -> avspot::Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::InvalidArgument(format!("report: {e}")))?;
    println!("{text}");
    Ok(())
}

fn default_checkpoint(cfg: &ExperimentConfig, given: Option<PathBuf>) -> PathBuf {
    given.unwrap_or_else(|| cfg.command_dir("train").join("model.ckpt"))
}

fn run(cli: Cli) -> avspot::Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers.max(1))
        .build_global()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let force = cli.force;
    match cli.command {
        Command::Synth(c) => print(&cmd_synth(&load(&c)?, force)?),
        Command::Train(c) => {
            let cfg = load(&c)?;
            let ckpt = cmd_train(&cfg, None, force)?;
            print(&serde_json::json!({
                "checkpoint": cfg.command_dir("train").join("model.ckpt"),
                "best_epoch": ckpt.header.epoch,
                "best_val_map": ckpt.header.val_map,
            }))
        }
        Command::Eval { common, checkpoint } => {
            let cfg = load(&common)?;
            let path = default_checkpoint(&cfg, checkpoint);
            print(&cmd_eval(&cfg, &path, force)?)
        }
        Command::Spot { common, checkpoint } => {
            let cfg = load(&common)?;
            let path = default_checkpoint(&cfg, checkpoint);
            let cands = cmd_spot(&cfg, &path, force)?;
            print(&serde_json::json!({
                "candidates": cfg.command_dir("spot").join("candidates.csv"),
                "n_candidates": cands.len(),
            }))
        }
        Command::EvalSpot { common, candidates } => {
            let cfg = load(&common)?;
            let path = candidates.unwrap_or_else(|| cfg.command_dir("spot").join("candidates.csv"));
            let s = cmd_eval_spot(&cfg, &path, force)?;
            print(&serde_json::json!({
                "n_candidates": s.n_candidates,
                "average_map": s.average_map,
            }))
        }
        Command::SpotGrid { common, checkpoint } => {
            let cfg = load(&common)?;
            print(&cmd_spot_grid(&cfg, &checkpoint, force)?)
        }
        Command::Gradcheck { out } => {
            let summary = cmd_gradcheck(Path::new(&out), force)?;
            for c in &summary.cases {
                println!(
                    "{:<20} {} max_rel_error={:.3e}",
                    c.name,
                    if c.passed { "pass" } else { "FAIL" },
                    c.max_rel_error
                );
            }
            if summary.passed {
                Ok(())
            } else {
                Err(Error::InvalidArgument("gradient check failed".into()))
            }
        }
        Command::Desk(c) => {
            let o = cmd_desk(&load(&c)?, force)?;
            print(&serde_json::json!({
                "map_events": {
                    "video_only": o.video.map_events,
                    "audio_only": o.audio.map_events,
                    "fused": o.fused.map_events,
                },
                "average_map": o.spotting.average_map,
            }))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let body = serde_json::json!({ "error": e.to_string(), "kind": e.kind() });
            eprintln!("{body}");
            ExitCode::FAILURE
        }
    }
}
