//! One-step quadratic bandit: reward is the negative squared distance between
//! the action and a fixed target.

use super::{Environment, Observation, Step};
use crate::noise::{Seed, SplitMix64};
use crate::policy::ShapeError;

pub(crate) fn default_observation() -> Vec<f32> {
    vec![1.0; 4]
}

/// `-||action - target||^2`, accumulated in f64.
pub fn bandit_fitness(action: &[f32], target: &[f32]) -> Result<f64, ShapeError> {
    if action.len() != target.len() {
        return Err(ShapeError::Length {
            expected: target.len(),
            got: action.len(),
        });
    }
    let sq: f64 = action
        .iter()
        .zip(target)
        .map(|(&a, &t)| {
            let d = f64::from(a) - f64::from(t);
            d * d
        })
        .sum();
    Ok(-sq)
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticBandit {
    target: Vec<f32>,
    base: Vec<f32>,
    noise_std: f32,
    action: Vec<f32>,
}

impl QuadraticBandit {
    pub fn new(target: Vec<f32>, observation: Vec<f32>, noise_std: f32) -> Result<Self, crate::Error> {
        if target.is_empty() || observation.is_empty() {
            return Err(crate::Error::Config(
                "bandit target and observation must be non-empty".into(),
            ));
        }
        if !(noise_std >= 0.0 && noise_std.is_finite()) {
            return Err(crate::Error::Config(format!("bad bandit noise_std {noise_std}")));
        }
        Ok(QuadraticBandit {
            action: vec![0.0; target.len()],
            target,
            base: observation,
            noise_std,
        })
    }

    pub fn target(&self) -> &[f32] {
        &self.target
    }
}

impl Environment for QuadraticBandit {
    fn observation_len(&self) -> usize {
        self.base.len()
    }

    fn action_len(&self) -> usize {
        self.target.len()
    }

    fn deterministic(&self) -> bool {
        self.noise_std == 0.0
    }

    fn max_steps(&self) -> u32 {
        1
    }

    fn reset(&mut self, episode_seed: Seed) -> Observation {
        self.action.fill(0.0);
        if self.deterministic() {
            return Observation(self.base.clone());
        }
        let mut rng = SplitMix64::new(u64::from(episode_seed.value()));
        Observation(
            self.base
                .iter()
                .map(|&b| (b + self.noise_std * rng.next_gaussian() as f32).clamp(0.0, 1.0))
                .collect(),
        )
    }

    fn step(&mut self, action: &[f32]) -> Step {
        self.action.copy_from_slice(&action[..self.target.len()]);
        Step {
            observation: Observation(self.base.clone()),
            done: true,
        }
    }

    fn fitness(&self) -> f64 {
        bandit_fitness(&self.action, &self.target).expect("action length checked in step")
    }

    fn behavior(&self) -> Vec<f32> {
        self.action.clone()
    }
}
