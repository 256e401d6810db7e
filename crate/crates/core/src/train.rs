//! Training driver: runs a [`RunState`] to completion against an evaluator and
//! writes the run's artifacts.
//!
//! Output directory layout:
//! - `config.toml`: the resolved experiment config
//! - `learning_curve.csv`: one row per generation
//! - `checkpoint.dgac`: latest checkpoint (plus `checkpoint_genNNNNN.dgac`
//!   when history is enabled)
//! - `elite.dgn`: the current elite genotype
//! - `best.dgn`: highest-reward member seen (novelty search, random search)

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use crate::checkpoint::Checkpoint;
use crate::config::ExperimentConfig;
use crate::eval::{EvalContext, Evaluator, LocalEvaluator};
use crate::evolution::{GenerationStats, Mode, RunState};
use crate::master::{Master, MasterOptions};
use crate::noise::NoiseTable;
use crate::Error;

pub const CURVE_FILE: &str = "learning_curve.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.dgac";
pub const ELITE_FILE: &str = "elite.dgn";
pub const BEST_FILE: &str = "best.dgn";

const BASE_COLUMNS: [&str; 6] = [
    "generation",
    "elite_fitness",
    "population_max",
    "population_median",
    "frames_cumulative",
    "elapsed_seconds",
];
const NOVELTY_COLUMNS: [&str; 2] = ["best_reward", "archive_size"];

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Serve workers on this address; evaluate in-process otherwise.
    pub listen: Option<String>,
    pub master: MasterOptions,
    /// Overrides the config's output directory.
    pub out: Option<PathBuf>,
    /// Print one progress line per generation to stderr.
    pub verbose: bool,
}

/// What a finished run leaves behind.
#[derive(Debug)]
pub struct TrainReport {
    pub state: RunState,
    pub out_dir: PathBuf,
    pub elapsed_seconds: f64,
}

pub fn csv_header(mode: Mode) -> Vec<&'static str> {
    let mut cols = BASE_COLUMNS.to_vec();
    if mode == Mode::GaNs {
        cols.extend(NOVELTY_COLUMNS);
    }
    cols
}

fn csv_row(stats: &GenerationStats, elapsed: f64, mode: Mode) -> Vec<String> {
    let mut row = vec![
        stats.generation.to_string(),
        stats.elite_fitness.to_string(),
        stats.population_max.to_string(),
        stats.population_median.to_string(),
        stats.frames_cumulative.to_string(),
        format!("{elapsed:.3}"),
    ];
    if mode == Mode::GaNs {
        row.push(stats.best_reward.map_or_else(String::new, |v| v.to_string()));
        row.push(stats.archive_size.map_or_else(String::new, |v| v.to_string()));
    }
    row
}

/// Starts a fresh run.
pub fn train(cfg: &ExperimentConfig, opts: &TrainOptions) -> Result<TrainReport, Error> {
    train_with(cfg, cfg.context()?, opts)
}

/// Starts a fresh run with an already built evaluation context, e.g. one
/// sharing its noise table with other runs.
pub fn train_with(cfg: &ExperimentConfig, ctx: EvalContext, opts: &TrainOptions) -> Result<TrainReport, Error> {
    let state = RunState::new(
        cfg.mode,
        cfg.ga.clone(),
        cfg.novelty.clone(),
        ctx.env.deterministic(),
    )?;
    let out_dir = opts.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    fs::create_dir_all(&out_dir)?;
    fs::write(out_dir.join("config.toml"), cfg.to_toml())?;
    let mut curve = csv::Writer::from_path(out_dir.join(CURVE_FILE)).map_err(csv_error)?;
    curve.write_record(csv_header(cfg.mode)).map_err(csv_error)?;
    curve.flush()?;
    drive(cfg, state, 0.0, ctx, curve, out_dir, opts)
}

/// Continues a run from a checkpoint file. Learning-curve rows past the
/// checkpoint's generation are dropped before new rows are appended.
pub fn resume(checkpoint: &Path, opts: &TrainOptions) -> Result<TrainReport, Error> {
    let cp = Checkpoint::load(checkpoint)?;
    cp.config.validate()?;
    let out_dir = match &opts.out {
        Some(dir) => dir.clone(),
        None => checkpoint
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| cp.config.output.dir.clone()),
    };
    fs::create_dir_all(&out_dir)?;
    let curve_path = out_dir.join(CURVE_FILE);
    let mut kept: Vec<csv::StringRecord> = Vec::new();
    if curve_path.exists() {
        let mut reader = csv::Reader::from_path(&curve_path).map_err(csv_error)?;
        for record in reader.records() {
            let record = record.map_err(csv_error)?;
            let generation: u32 = record
                .get(0)
                .and_then(|g| g.parse().ok())
                .ok_or_else(|| Error::Config(format!("bad row in {}", curve_path.display())))?;
            if generation <= cp.state.generation {
                kept.push(record);
            }
        }
    }
    let mut curve = csv::Writer::from_path(&curve_path).map_err(csv_error)?;
    curve.write_record(csv_header(cp.config.mode)).map_err(csv_error)?;
    for record in &kept {
        curve.write_record(record).map_err(csv_error)?;
    }
    curve.flush()?;
    let ctx = cp.config.context()?;
    drive(&cp.config, cp.state, cp.elapsed_seconds, ctx, curve, out_dir, opts)
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn drive(
    cfg: &ExperimentConfig,
    mut state: RunState,
    elapsed_before: f64,
    ctx: EvalContext,
    mut curve: csv::Writer<fs::File>,
    out_dir: PathBuf,
    opts: &TrainOptions,
) -> Result<TrainReport, Error> {
    let started = Instant::now();
    let mut evaluator = make_evaluator(ctx, opts)?;
    let elapsed = |started: &Instant| elapsed_before + started.elapsed().as_secs_f64();
    let mode = cfg.mode;
    state.run(evaluator.as_mut(), |st, stats| {
        let now = elapsed(&started);
        curve.write_record(csv_row(stats, now, mode)).map_err(csv_error)?;
        curve.flush()?;
        let cp = Checkpoint {
            config: cfg.clone(),
            state: st.clone(),
            elapsed_seconds: now,
        };
        cp.save(&out_dir.join(CHECKPOINT_FILE))?;
        if cfg.output.checkpoint_history {
            cp.save(&out_dir.join(format!("checkpoint_gen{:05}.dgac", st.generation)))?;
        }
        write_genotypes(st, &out_dir)?;
        if opts.verbose {
            eprintln!(
                "gen {:>4}  elite {:.4}  max {:.4}  median {:.4}  frames {}  {:.1}s",
                stats.generation,
                stats.elite_fitness,
                stats.population_max,
                stats.population_median,
                stats.frames_cumulative,
                now
            );
        }
        Ok(())
    })?;
    drop(evaluator);
    Ok(TrainReport {
        elapsed_seconds: elapsed(&started),
        state,
        out_dir,
    })
}

fn write_genotypes(state: &RunState, out_dir: &Path) -> Result<(), Error> {
    if let Some(elite) = state.elite() {
        fs::write(out_dir.join(ELITE_FILE), elite.genotype.to_bytes())?;
    }
    if state.mode != Mode::Ga {
        if let Some(best) = &state.best {
            fs::write(out_dir.join(BEST_FILE), best.genotype.to_bytes())?;
        }
    }
    Ok(())
}

fn make_evaluator(ctx: EvalContext, opts: &TrainOptions) -> Result<Box<dyn Evaluator>, Error> {
    let Some(addr) = &opts.listen else {
        return Ok(Box::new(LocalEvaluator::new(ctx)));
    };
    let checksum = ctx.table.checksum();
    let master = Master::bind(addr.as_str(), LocalEvaluator::new(ctx), checksum, opts.master.clone())?;
    eprintln!("listening on {}", master.local_addr());
    Ok(Box::new(master))
}

/// Builds the context for a worker process from the same config file the
/// master uses.
pub fn worker_context(cfg: &ExperimentConfig) -> Result<(EvalContext, u64), Error> {
    let table = Arc::new(NoiseTable::build(cfg.noise.seed, cfg.noise.size)?);
    let checksum = table.checksum();
    Ok((cfg.context_with(table)?, checksum))
}
