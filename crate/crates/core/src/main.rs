use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use deepga::config::ExperimentConfig;
use deepga::genome::{ratio_for, Genotype};
use deepga::master::MasterOptions;
use deepga::noise::Seed;
use deepga::train::{self, TrainOptions};
use deepga::worker::{run_worker, WorkerOptions};

#[derive(Parser)]
#[command(name = "deepga", version, about = "Deep genetic algorithm trainer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment, optionally serving remote workers.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Continue from a checkpoint instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[command(flatten)]
        master: MasterArgs,
    },
    /// Join a master and evaluate tasks until it shuts down.
    Worker {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        connect: String,
        /// Concurrent evaluations (default: available cores).
        #[arg(long)]
        capacity: Option<usize>,
    },
    /// Run a genotype for a number of episodes and print fitness statistics.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        episodes: u32,
        /// First episode seed; episode i uses seed FIRST + i.
        #[arg(long, default_value_t = 0)]
        first_seed: u32,
        genotype: PathBuf,
    },
    /// Print a genotype's chain length, sigma, size and compression ratio.
    Inspect {
        /// Policy to measure the ratio against (parameter count).
        #[arg(long)]
        config: Option<PathBuf>,
        genotype: PathBuf,
    },
    /// Continue a run from a checkpoint.
    Resume {
        #[arg(long)]
        resume: PathBuf,
        #[command(flatten)]
        master: MasterArgs,
    },
}

#[derive(Args)]
struct MasterArgs {
    /// Serve workers on this address (evaluations run in-process otherwise).
    #[arg(long)]
    listen: Option<String>,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Wait for this many workers before the first generation.
    #[arg(long, default_value_t = 0)]
    wait_workers: usize,
    /// Seconds before an unanswered task is reassigned.
    #[arg(long, default_value_t = 60.0)]
    task_timeout: f64,
    #[arg(long, short)]
    quiet: bool,
}

impl MasterArgs {
    fn options(&self) -> Result<TrainOptions> {
        if !(self.task_timeout.is_finite() && self.task_timeout > 0.0) {
            bail!("--task-timeout must be a positive number of seconds");
        }
        Ok(TrainOptions {
            listen: self.listen.clone(),
            master: MasterOptions {
                wait_workers: self.wait_workers,
                task_timeout: Duration::from_secs_f64(self.task_timeout),
                ..MasterOptions::default()
            },
            out: self.out.clone(),
            verbose: !self.quiet,
        })
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path).with_context(|| format!("loading config {}", path.display()))
}

fn load_genotype(path: &Path) -> Result<Genotype> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Genotype::from_bytes(&bytes).with_context(|| format!("decoding {}", path.display()))
}

fn report(r: &train::TrainReport) {
    if let Some(elite) = r.state.elite() {
        println!(
            "finished generation {} in {:.1}s: elite fitness {}, {} frames, output in {}",
            r.state.generation,
            r.elapsed_seconds,
            elite.fitness,
            r.state.frames,
            r.out_dir.display()
        );
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            resume,
            master,
        } => {
            let opts = master.options()?;
            let r = match (config, resume) {
                (_, Some(cp)) => train::resume(&cp, &opts)?,
                (Some(path), None) => train::train(&load_config(&path)?, &opts)?,
                (None, None) => bail!("train needs --config or --resume"),
            };
            report(&r);
        }
        Command::Resume { resume, master } => {
            let r = train::resume(&resume, &master.options()?)?;
            report(&r);
        }
        Command::Worker {
            config,
            connect,
            capacity,
        } => {
            let cfg = load_config(&config)?;
            let (ctx, checksum) = train::worker_context(&cfg)?;
            let mut opts = WorkerOptions::default();
            if let Some(c) = capacity {
                opts.capacity = c.max(1);
            }
            run_worker(connect.as_str(), ctx, checksum, &opts)?;
        }
        Command::Eval {
            config,
            episodes,
            first_seed,
            genotype,
        } => {
            if episodes == 0 {
                bail!("--episodes must be at least 1");
            }
            let cfg = load_config(&config)?;
            let g = load_genotype(&genotype)?;
            let ctx = cfg.context()?;
            let theta = ctx.reconstruct(&g)?;
            let mut scores = Vec::with_capacity(episodes as usize);
            for i in 0..episodes {
                let seed = first_seed
                    .checked_add(i)
                    .and_then(|v| Seed::new(v).ok())
                    .context("episode seed out of range")?;
                scores.push(ctx.rollout(&theta, &[seed])?.fitness);
            }
            let mean = scores.iter().sum::<f64>() / scores.len() as f64;
            let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            println!("episodes {episodes}");
            println!("mean {mean}");
            println!("min {min}");
            println!("max {max}");
        }
        Command::Inspect { config, genotype } => {
            let g = load_genotype(&genotype)?;
            println!("chain_length {}", g.mutation_seeds.len());
            println!("sigma {}", g.sigma);
            println!("serialized_bytes {}", g.serialized_len());
            if let Some(path) = config {
                let cfg = load_config(&path)?;
                let params = cfg.policy.param_count()?;
                println!("param_count {params}");
                println!("compression_ratio {:.3}", ratio_for(params, &g));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
