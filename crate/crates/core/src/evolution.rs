//! The generational GA with truncation selection and elitism, novelty-search
//! generations, and the random-search baseline, driven as one resumable state
//! machine.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::eval::{EvalTask, Evaluator};
use crate::genome::{CodecMode, Genotype};
use crate::noise::{mix64, Seed, SplitMix64};
use crate::novelty::{archive_sweep, best_reward_index, population_novelty, Archive, NoveltyConfig};
use crate::Error;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Ga,
    GaNs,
    Rs,
}

impl Mode {
    pub fn to_byte(self) -> u8 {
        match self {
            Mode::Ga => 0,
            Mode::GaNs => 1,
            Mode::Rs => 2,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Mode::Ga),
            1 => Some(Mode::GaNs),
            2 => Some(Mode::Rs),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaConfig {
    /// Population size N (batch size for random search).
    pub population: usize,
    /// Truncation size T.
    pub truncation: usize,
    /// Mutation power.
    pub sigma: f64,
    #[serde(default = "one")]
    pub trials: usize,
    #[serde(default = "default_elite_candidates")]
    pub elite_candidates: usize,
    #[serde(default = "default_elite_episodes")]
    pub elite_episodes: usize,
    /// Generation cap G.
    pub generations: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_budget: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluation_budget: Option<u64>,
    /// Master seed of the run's random streams.
    pub seed: Seed,
    #[serde(default)]
    pub codec: CodecMode,
}

fn one() -> usize {
    1
}
fn default_elite_candidates() -> usize {
    10
}
fn default_elite_episodes() -> usize {
    30
}

impl GaConfig {
    /// Desk-scale maze settings.
    pub fn desk_maze(seed: Seed) -> Self {
        GaConfig {
            population: 201,
            truncation: 20,
            sigma: 0.005,
            trials: 1,
            elite_candidates: default_elite_candidates(),
            elite_episodes: default_elite_episodes(),
            generations: 100,
            frame_budget: None,
            evaluation_budget: None,
            seed,
            codec: CodecMode::Direct,
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        let bad = |m: String| Err(Error::Config(m));
        if self.population == 0 {
            return bad("population must be at least 1".into());
        }
        if self.truncation == 0 || self.truncation > self.population {
            return bad(format!(
                "truncation {} must lie in 1..={}",
                self.truncation, self.population
            ));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return bad(format!("sigma {} must be positive", self.sigma));
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.elite_candidates == 0 || self.elite_candidates > self.population {
            return bad(format!(
                "elite_candidates {} must lie in 1..={}",
                self.elite_candidates, self.population
            ));
        }
        if self.elite_episodes == 0 {
            return bad("elite_episodes must be at least 1".into());
        }
        if self.frame_budget == Some(0) || self.evaluation_budget == Some(0) {
            return bad("budgets must be positive".into());
        }
        Ok(())
    }
}

/// Independent random streams derived from the master seed, one per kind of
/// decision, so that scheduling never changes which numbers a decision sees.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeedStreams {
    pub init: SplitMix64,
    pub parent: SplitMix64,
    pub mutation: SplitMix64,
    pub episode: SplitMix64,
    pub elite: SplitMix64,
    pub archive: SplitMix64,
}

impl SeedStreams {
    pub const COUNT: usize = 6;

    pub fn new(master: Seed) -> Self {
        let stream = |tag: u64| SplitMix64::new(mix64(u64::from(master.value()) ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15)));
        SeedStreams {
            init: stream(1),
            parent: stream(2),
            mutation: stream(3),
            episode: stream(4),
            elite: stream(5),
            archive: stream(6),
        }
    }

    pub fn states(&self) -> [u64; Self::COUNT] {
        [
            self.init.state(),
            self.parent.state(),
            self.mutation.state(),
            self.episode.state(),
            self.elite.state(),
            self.archive.state(),
        ]
    }

    pub fn from_states(s: [u64; Self::COUNT]) -> Self {
        SeedStreams {
            init: SplitMix64::new(s[0]),
            parent: SplitMix64::new(s[1]),
            mutation: SplitMix64::new(s[2]),
            episode: SplitMix64::new(s[3]),
            elite: SplitMix64::new(s[4]),
            archive: SplitMix64::new(s[5]),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Member {
    pub genotype: Genotype,
    pub fitness: f64,
    pub bc: Vec<f32>,
    /// Selection score under novelty search; zero otherwise.
    pub novelty: f64,
}

/// `n` generation-zero genotypes with pairwise distinct initialization seeds.
pub fn init_population(n: usize, sigma: f64, codec: CodecMode, rng: &mut SplitMix64) -> Vec<Genotype> {
    let mut seen = HashSet::with_capacity(n);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let tau0 = rng.next_seed();
        if seen.insert(tau0) {
            out.push(Genotype::new(tau0, sigma, codec));
        }
    }
    out
}

/// Uniform parent index in `[0, t)`.
pub fn select_parent(t: usize, rng: &mut SplitMix64) -> usize {
    rng.next_below(t as u64) as usize
}

/// Stable descending sort by `key`.
pub fn sort_descending(members: &mut [Member], key: impl Fn(&Member) -> f64) {
    members.sort_by(|a, b| key(b).total_cmp(&key(a)));
}

/// Picks the highest mean score; ties go to the earliest candidate, so the
/// incumbent should be listed first.
pub fn argmax_first(scores: &[f64]) -> Option<usize> {
    best_reward_index(scores)
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn max_of(values: &[f64]) -> f64 {
    values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// One row of the learning curve.
#[derive(Clone, Debug, PartialEq)]
pub struct GenerationStats {
    pub generation: u32,
    pub elite_fitness: f64,
    pub population_max: f64,
    pub population_median: f64,
    pub frames_cumulative: u64,
    /// Novelty search only.
    pub best_reward: Option<f64>,
    pub archive_size: Option<usize>,
}

/// Complete coordinator state between generations.
#[derive(Clone, Debug, PartialEq)]
pub struct RunState {
    pub mode: Mode,
    pub ga: GaConfig,
    pub novelty: NoveltyConfig,
    /// Whether the environment ignores episode seeds.
    pub deterministic: bool,
    /// Completed generations (batches for random search).
    pub generation: u32,
    /// Current population: elite (or novelty rank 1) first. For random
    /// search, the last batch.
    pub population: Vec<Member>,
    pub archive: Archive,
    pub streams: SeedStreams,
    pub frames: u64,
    pub evaluations: u64,
    /// Highest-fitness member seen so far.
    pub best: Option<Member>,
}

impl RunState {
    pub fn new(mode: Mode, ga: GaConfig, novelty: NoveltyConfig, deterministic: bool) -> Result<Self, Error> {
        ga.validate()?;
        if mode == Mode::GaNs {
            novelty.validate().map_err(Error::Config)?;
        }
        Ok(RunState {
            mode,
            streams: SeedStreams::new(ga.seed),
            ga,
            novelty,
            deterministic,
            generation: 0,
            population: Vec::new(),
            archive: Archive::new(),
            frames: 0,
            evaluations: 0,
            best: None,
        })
    }

    pub fn finished(&self) -> bool {
        self.generation >= self.ga.generations
            || self.ga.frame_budget.is_some_and(|b| self.frames >= b)
            || self.ga.evaluation_budget.is_some_and(|b| self.evaluations >= b)
    }

    /// The run's designated elite: population member 0 for the GA modes, the
    /// best member seen for random search.
    pub fn elite(&self) -> Option<&Member> {
        match self.mode {
            Mode::Rs => self.best.as_ref(),
            _ => self.population.first(),
        }
    }

    fn episode_seeds(&mut self, n: usize) -> Vec<Seed> {
        (0..n).map(|_| self.streams.episode.next_seed()).collect()
    }

    fn evaluate(
        &mut self,
        evaluator: &mut dyn Evaluator,
        genotypes: Vec<Genotype>,
    ) -> Result<Vec<Member>, Error> {
        let tasks: Vec<EvalTask> = genotypes
            .into_iter()
            .map(|genotype| EvalTask {
                genotype,
                episode_seeds: self.episode_seeds(self.ga.trials),
            })
            .collect();
        let outcomes = evaluator.evaluate_batch(self.generation, &tasks)?;
        if outcomes.len() != tasks.len() {
            return Err(Error::Protocol(format!(
                "evaluator returned {} results for {} tasks",
                outcomes.len(),
                tasks.len()
            )));
        }
        self.evaluations += tasks.len() as u64;
        Ok(tasks
            .into_iter()
            .zip(outcomes)
            .map(|(task, o)| {
                self.frames += u64::from(o.frames);
                Member {
                    genotype: task.genotype,
                    fitness: o.fitness,
                    bc: o.bc,
                    novelty: 0.0,
                }
            })
            .collect())
    }

    /// Offspring of the current population: `N - 1` mutated copies of parents
    /// drawn from the first `T` members.
    fn offspring(&mut self) -> Vec<Genotype> {
        let t = self.ga.truncation.min(self.population.len());
        (1..self.ga.population)
            .map(|_| {
                let k = select_parent(t, &mut self.streams.parent);
                let tau = self.streams.mutation.next_seed();
                self.population[k].genotype.mutate(tau)
            })
            .collect()
    }

    fn track_best(&mut self, members: &[Member]) {
        let fitness: Vec<f64> = members.iter().map(|m| m.fitness).collect();
        if let Some(i) = best_reward_index(&fitness) {
            if self.best.as_ref().is_none_or(|b| members[i].fitness > b.fitness) {
                self.best = Some(members[i].clone());
            }
        }
    }

    /// Runs one generation (or one random-search batch).
    pub fn step(&mut self, evaluator: &mut dyn Evaluator) -> Result<GenerationStats, Error> {
        match self.mode {
            Mode::Ga => self.ga_generation(evaluator),
            Mode::GaNs => self.gans_generation(evaluator),
            Mode::Rs => self.rs_batch(evaluator),
        }
    }

    fn ga_generation(&mut self, evaluator: &mut dyn Evaluator) -> Result<GenerationStats, Error> {
        let (mut members, incumbent) = if self.generation == 0 {
            let genotypes = init_population(
                self.ga.population,
                self.ga.sigma,
                self.ga.codec,
                &mut self.streams.init,
            );
            (self.evaluate(evaluator, genotypes)?, None)
        } else {
            let children = self.offspring();
            let elite = self.population[0].clone();
            let mut members = vec![elite.clone()];
            members.extend(self.evaluate(evaluator, children)?);
            (members, Some(elite))
        };
        sort_descending(&mut members, |m| m.fitness);
        if !self.deterministic {
            self.confirm_elite(evaluator, &mut members, incumbent.as_ref())?;
        }
        self.track_best(&members);
        self.population = members;
        self.generation += 1;
        let fitness: Vec<f64> = self.population.iter().map(|m| m.fitness).collect();
        Ok(GenerationStats {
            generation: self.generation,
            elite_fitness: fitness[0],
            population_max: max_of(&fitness),
            population_median: median(&fitness),
            frames_cumulative: self.frames,
            best_reward: None,
            archive_size: None,
        })
    }

    /// Re-evaluates the top candidates (plus the incumbent) on shared fresh
    /// episodes and moves the winner to the front with its confirmation mean.
    fn confirm_elite(
        &mut self,
        evaluator: &mut dyn Evaluator,
        members: &mut Vec<Member>,
        incumbent: Option<&Member>,
    ) -> Result<(), Error> {
        let incumbent_idx = incumbent.and_then(|e| {
            members
                .iter()
                .position(|m| m.genotype == e.genotype)
        });
        let mut candidates: Vec<usize> = Vec::new();
        let fresh = match incumbent_idx {
            Some(_) => self.ga.elite_candidates - 1,
            None => self.ga.elite_candidates,
        };
        if let Some(i) = incumbent_idx {
            candidates.push(i);
        }
        candidates.extend((0..members.len()).filter(|&i| Some(i) != incumbent_idx).take(fresh));
        let seeds: Vec<Seed> = (0..self.ga.elite_episodes)
            .map(|_| self.streams.elite.next_seed())
            .collect();
        let tasks: Vec<EvalTask> = candidates
            .iter()
            .map(|&i| EvalTask {
                genotype: members[i].genotype.clone(),
                episode_seeds: seeds.clone(),
            })
            .collect();
        let outcomes = evaluator.evaluate_batch(self.generation, &tasks)?;
        self.frames += outcomes.iter().map(|o| u64::from(o.frames)).sum::<u64>();
        // Incumbent first, then sorted order, so ties resolve toward it.
        let scores: Vec<f64> = outcomes.iter().map(|o| o.fitness).collect();
        let win = argmax_first(&scores).expect("at least one candidate");
        let mut elite = members.remove(candidates[win]);
        elite.fitness = outcomes[win].fitness;
        elite.bc = outcomes[win].bc.clone();
        members.insert(0, elite);
        Ok(())
    }

    fn gans_generation(&mut self, evaluator: &mut dyn Evaluator) -> Result<GenerationStats, Error> {
        let mut members = if self.generation == 0 {
            let genotypes = init_population(
                self.ga.population,
                self.ga.sigma,
                self.ga.codec,
                &mut self.streams.init,
            );
            self.evaluate(evaluator, genotypes)?
        } else {
            let children = self.offspring();
            let mut members = vec![self.population[0].clone()];
            members.extend(self.evaluate(evaluator, children)?);
            members
        };
        let bcs: Vec<Vec<f32>> = members.iter().map(|m| m.bc.clone()).collect();
        let scores = population_novelty(&bcs, &self.archive, &self.novelty)?;
        for (m, s) in members.iter_mut().zip(scores) {
            m.novelty = s;
        }
        archive_sweep(&bcs, &mut self.archive, self.novelty.p, &mut self.streams.archive);
        sort_descending(&mut members, |m| m.novelty);
        self.track_best(&members);
        self.population = members;
        self.generation += 1;
        let fitness: Vec<f64> = self.population.iter().map(|m| m.fitness).collect();
        let best = best_reward_index(&fitness).expect("non-empty population");
        Ok(GenerationStats {
            generation: self.generation,
            elite_fitness: fitness[0],
            population_max: max_of(&fitness),
            population_median: median(&fitness),
            frames_cumulative: self.frames,
            best_reward: Some(fitness[best]),
            archive_size: Some(self.archive.len()),
        })
    }

    fn rs_batch(&mut self, evaluator: &mut dyn Evaluator) -> Result<GenerationStats, Error> {
        let mut n = self.ga.population;
        if let Some(b) = self.ga.evaluation_budget {
            n = n.min((b - self.evaluations.min(b)) as usize).max(1);
        }
        let genotypes: Vec<Genotype> = (0..n)
            .map(|_| Genotype::new(self.streams.init.next_seed(), self.ga.sigma, self.ga.codec))
            .collect();
        let members = self.evaluate(evaluator, genotypes)?;
        self.track_best(&members);
        self.population = members;
        self.generation += 1;
        let fitness: Vec<f64> = self.population.iter().map(|m| m.fitness).collect();
        Ok(GenerationStats {
            generation: self.generation,
            elite_fitness: self.best.as_ref().map_or(f64::NAN, |b| b.fitness),
            population_max: max_of(&fitness),
            population_median: median(&fitness),
            frames_cumulative: self.frames,
            best_reward: None,
            archive_size: None,
        })
    }

    /// Steps until finished, calling `on_generation` after each step.
    pub fn run(
        &mut self,
        evaluator: &mut dyn Evaluator,
        mut on_generation: impl FnMut(&RunState, &GenerationStats) -> Result<(), Error>,
    ) -> Result<(), Error> {
        while !self.finished() {
            let stats = self.step(evaluator)?;
            on_generation(self, &stats)?;
        }
        Ok(())
    }
}
