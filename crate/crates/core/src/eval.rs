//! Fitness evaluation of genotypes: reconstruction plus episode rollouts.

use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;

use crate::env::EnvSpec;
use crate::genome::{apply_mutation, reconstruct_with, Genotype};
use crate::noise::{NoiseTable, Seed};
use crate::policy::Network;
use crate::Error;

/// One member evaluation: a genotype and the episode seeds to run it on.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalTask {
    pub genotype: Genotype,
    pub episode_seeds: Vec<Seed>,
}

/// Mean fitness and mean behavior over the task's episodes, plus the total
/// number of frames consumed.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalOutcome {
    pub fitness: f64,
    pub bc: Vec<f32>,
    pub frames: u32,
}

/// Everything needed to turn a genotype into rollouts.
#[derive(Clone, Debug)]
pub struct EvalContext {
    pub table: Arc<NoiseTable>,
    pub net: Arc<Network>,
    pub env: EnvSpec,
}

impl EvalContext {
    pub fn new(table: Arc<NoiseTable>, net: Arc<Network>, env: EnvSpec) -> Result<Self, Error> {
        env.check_policy(&net)?;
        Ok(EvalContext { table, net, env })
    }

    pub fn reconstruct(&self, g: &Genotype) -> Result<Vec<f32>, Error> {
        Ok(reconstruct_with(g, &self.net, &self.table)?)
    }

    /// Rolls out `theta` once per episode seed.
    pub fn rollout(&self, theta: &[f32], episode_seeds: &[Seed]) -> Result<EvalOutcome, Error> {
        if episode_seeds.is_empty() {
            return Err(Error::Config("an evaluation needs at least one episode".into()));
        }
        let mut fitness = 0.0f64;
        let mut bc: Vec<f32> = Vec::new();
        let mut frames = 0u32;
        for &seed in episode_seeds {
            let r = self.env.run_episode(&self.net, theta, seed)?;
            fitness += r.fitness;
            if bc.is_empty() {
                bc = r.bc;
            } else {
                bc.iter_mut().zip(&r.bc).for_each(|(a, b)| *a += b);
            }
            frames = frames.saturating_add(r.frames);
        }
        let n = episode_seeds.len();
        if n > 1 {
            fitness /= n as f64;
            bc.iter_mut().for_each(|v| *v /= n as f32);
        }
        Ok(EvalOutcome { fitness, bc, frames })
    }

    pub fn evaluate(&self, task: &EvalTask) -> Result<EvalOutcome, Error> {
        let theta = self.reconstruct(&task.genotype)?;
        self.rollout(&theta, &task.episode_seeds)
    }
}

/// Evaluates batches of tasks; results come back in task order.
pub trait Evaluator {
    fn evaluate_batch(&mut self, generation: u32, tasks: &[EvalTask]) -> Result<Vec<EvalOutcome>, Error>;
}

/// Multi-threaded in-process evaluator.
///
/// Keeps the parameter vectors of the previous batch so that a child one
/// mutation away from a cached genotype costs a single noise addition. The
/// arithmetic is the same sequence of operations as a full reconstruction, so
/// cached and uncached results agree bitwise.
pub struct LocalEvaluator {
    ctx: EvalContext,
    cache: HashMap<Vec<u8>, Arc<Vec<f32>>>,
}

impl LocalEvaluator {
    pub fn new(ctx: EvalContext) -> Self {
        LocalEvaluator {
            ctx,
            cache: HashMap::new(),
        }
    }

    pub fn context(&self) -> &EvalContext {
        &self.ctx
    }

    fn theta_for(&self, g: &Genotype) -> Result<Arc<Vec<f32>>, Error> {
        if let Some(theta) = self.cache.get(&g.to_bytes()) {
            return Ok(theta.clone());
        }
        if let (Some(parent), Some(&tau)) = (g.parent(), g.mutation_seeds.last()) {
            if let Some(base) = self.cache.get(&parent.to_bytes()) {
                let mut theta = base.as_ref().clone();
                apply_mutation(&mut theta, tau, g.sigma, g.mode, &self.ctx.table)?;
                return Ok(Arc::new(theta));
            }
        }
        Ok(Arc::new(self.ctx.reconstruct(g)?))
    }
}

impl Evaluator for LocalEvaluator {
    fn evaluate_batch(&mut self, _generation: u32, tasks: &[EvalTask]) -> Result<Vec<EvalOutcome>, Error> {
        let results: Vec<(Arc<Vec<f32>>, EvalOutcome)> = tasks
            .par_iter()
            .map(|task| {
                let theta = self.theta_for(&task.genotype)?;
                let outcome = self.ctx.rollout(&theta, &task.episode_seeds)?;
                Ok((theta, outcome))
            })
            .collect::<Result<_, Error>>()?;
        self.cache.clear();
        let mut outcomes = Vec::with_capacity(results.len());
        for (task, (theta, outcome)) in tasks.iter().zip(results) {
            self.cache.insert(task.genotype.to_bytes(), theta);
            outcomes.push(outcome);
        }
        Ok(outcomes)
    }
}
