use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tiltdiff::experiments::{compare, convergence, pipeline, report, run_scoregap, ExperimentConfig};
use tiltdiff::Error;

/// Tilted sampling experiments: reweighted resampling, diffusion, bounds.
#[derive(Parser, Debug)]
#[command(name = "tiltdiff", version, about)]
struct Cli {
    /// Experiment config (JSON). Missing fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Replace the configured seed list with this single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sliced-W error of reweighted resampling vs sample size, with bounds.
    Convergence,
    /// Compare reweigh, reweigh+diffusion and exact draws across θ.
    BoundedTarget,
    /// JSON report of tilt constants, bound curves and CLT variances.
    Bounds,
    /// Run the score-gap inequality battery.
    Scoregap,
    /// Train a denoiser on the tilted target.
    Train,
    /// Draw samples from a trained checkpoint.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, short = 'n', default_value_t = 10_000)]
        n: usize,
        /// Override the number of reverse steps.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Sliced-W and histogram TV between two CSV point sets.
    Eval {
        #[arg(long)]
        x: PathBuf,
        #[arg(long)]
        y: PathBuf,
    },
}

fn load_config(cli: &Cli) -> tiltdiff::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
        cfg.battery.seed = seed;
    }
    if let Some(dir) = &cli.out_dir {
        cfg.out_dir = dir.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> tiltdiff::Result<Vec<PathBuf>> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    }
    let cfg = load_config(cli)?;
    Ok(match &cli.command {
        Command::Convergence => convergence::run(&cfg)?.1,
        Command::BoundedTarget => compare::run(&cfg)?.1,
        Command::Bounds => report::run(&cfg)?.1,
        Command::Scoregap => run_scoregap(&cfg)?,
        Command::Train => pipeline::run_train(&cfg)?.2,
        Command::Sample { checkpoint, n, steps } => pipeline::run_sample(&cfg, checkpoint, *n, *steps)?.1,
        Command::Eval { x, y } => pipeline::run_eval(&cfg, x, y)?.1,
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
