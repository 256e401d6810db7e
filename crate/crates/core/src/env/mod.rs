//! Environments and the episode runner.

pub mod bandit;
pub mod maze;

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::noise::Seed;
use crate::policy::{Network, PolicySpec, ShapeError};

pub use bandit::{bandit_fitness, QuadraticBandit};
pub use maze::{MazeEnv, MazeMap, MazeParams, RobotPose};

/// Flat observation values in the policy's input layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation(pub Vec<f32>);

#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub observation: Observation,
    pub done: bool,
}

/// Outcome of one rollout.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeResult {
    pub fitness: f64,
    pub bc: Vec<f32>,
    pub frames: u32,
}

pub trait Environment: Send {
    fn observation_len(&self) -> usize;
    fn action_len(&self) -> usize;
    /// Deterministic environments ignore the episode seed.
    fn deterministic(&self) -> bool;
    fn max_steps(&self) -> u32;
    fn reset(&mut self, episode_seed: Seed) -> Observation;
    fn step(&mut self, action: &[f32]) -> Step;
    fn fitness(&self) -> f64;
    fn behavior(&self) -> Vec<f32>;
}

/// Environment section of an experiment config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EnvConfig {
    Maze {
        /// Map file; the bundled map when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        map: Option<PathBuf>,
        #[serde(default = "maze::default_max_steps")]
        max_steps: u32,
        #[serde(default = "maze::default_v_max")]
        v_max: f64,
        #[serde(default = "maze::default_turn_max")]
        turn_max: f64,
    },
    Bandit {
        target: Vec<f32>,
        #[serde(default = "bandit::default_observation")]
        observation: Vec<f32>,
        #[serde(default)]
        noise_std: f32,
    },
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig::Maze {
            map: None,
            max_steps: maze::default_max_steps(),
            v_max: maze::default_v_max(),
            turn_max: maze::default_turn_max(),
        }
    }
}

impl EnvConfig {
    pub fn resolve(&self) -> Result<EnvSpec, crate::Error> {
        match self {
            EnvConfig::Maze {
                map,
                max_steps,
                v_max,
                turn_max,
            } => {
                let map = match map {
                    Some(path) => MazeMap::load(path)?,
                    None => MazeMap::builtin(),
                };
                Ok(EnvSpec::Maze(Arc::new(maze::MazeContext::new(
                    map,
                    MazeParams {
                        max_steps: *max_steps,
                        v_max: *v_max,
                        turn_max: *turn_max,
                    },
                )?)))
            }
            EnvConfig::Bandit {
                target,
                observation,
                noise_std,
            } => Ok(EnvSpec::Bandit(QuadraticBandit::new(
                target.clone(),
                observation.clone(),
                *noise_std,
            )?)),
        }
    }
}

/// A resolved, shareable environment description.
#[derive(Clone, Debug)]
pub enum EnvSpec {
    Maze(Arc<maze::MazeContext>),
    Bandit(QuadraticBandit),
}

impl EnvSpec {
    pub fn instantiate(&self) -> Box<dyn Environment> {
        match self {
            EnvSpec::Maze(ctx) => Box::new(MazeEnv::new(ctx.clone())),
            EnvSpec::Bandit(b) => Box::new(b.clone()),
        }
    }

    pub fn deterministic(&self) -> bool {
        match self {
            EnvSpec::Maze(_) => true,
            EnvSpec::Bandit(b) => b.deterministic(),
        }
    }

    pub fn observation_len(&self) -> usize {
        match self {
            EnvSpec::Maze(_) => maze::OBS_LEN,
            EnvSpec::Bandit(b) => b.observation_len(),
        }
    }

    pub fn action_len(&self) -> usize {
        match self {
            EnvSpec::Maze(_) => 2,
            EnvSpec::Bandit(b) => b.action_len(),
        }
    }

    pub fn check_policy(&self, net: &Network) -> Result<(), ShapeError> {
        if net.input().len() != self.observation_len() {
            return Err(ShapeError::Observation {
                expected: self.observation_len(),
                got: net.input().len(),
            });
        }
        if net.output_len() != self.action_len() {
            return Err(ShapeError::Length {
                expected: self.action_len(),
                got: net.output_len(),
            });
        }
        Ok(())
    }

    /// Runs one episode, using the incremental evaluator for the maze.
    pub fn run_episode(
        &self,
        net: &Network,
        theta: &[f32],
        episode_seed: Seed,
    ) -> Result<EpisodeResult, ShapeError> {
        match self {
            EnvSpec::Maze(ctx) => maze::run_fast(ctx, net, theta),
            EnvSpec::Bandit(b) => {
                let mut env = b.clone();
                run_episode_with(net, theta, &mut env, episode_seed)
            }
        }
    }
}

/// Straightforward rollout: reset, then forward and step until done or the cap.
pub fn run_episode_with(
    net: &Network,
    theta: &[f32],
    env: &mut dyn Environment,
    episode_seed: Seed,
) -> Result<EpisodeResult, ShapeError> {
    net.check_params(theta)?;
    let mut ws = net.workspace();
    let mut obs = env.reset(episode_seed);
    let mut frames = 0u32;
    while frames < env.max_steps() {
        let action = net.forward_into(theta, &obs.0, &mut ws)?;
        let step = env.step(action);
        frames += 1;
        obs = step.observation;
        if step.done {
            break;
        }
    }
    Ok(EpisodeResult {
        fitness: env.fitness(),
        bc: env.behavior(),
        frames,
    })
}

pub fn run_episode(
    spec: &PolicySpec,
    theta: &[f32],
    env: &mut dyn Environment,
    episode_seed: Seed,
) -> Result<EpisodeResult, ShapeError> {
    run_episode_with(&spec.compile()?, theta, env, episode_seed)
}
