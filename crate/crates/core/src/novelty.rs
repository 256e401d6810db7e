//! Novelty search: behavioral distance, k-nearest-neighbor novelty and the
//! probabilistic archive.

use serde::{Deserialize, Serialize};

use crate::noise::SplitMix64;
use crate::policy::ShapeError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distance {
    #[default]
    SquaredEuclidean,
}

impl Distance {
    pub fn between(self, a: &[f32], b: &[f32]) -> f64 {
        match self {
            Distance::SquaredEuclidean => a
                .iter()
                .zip(b)
                .map(|(&x, &y)| {
                    let d = f64::from(x) - f64::from(y);
                    d * d
                })
                .sum(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoveltyConfig {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default)]
    pub distance: Distance,
}

fn default_k() -> usize {
    25
}

fn default_p() -> f64 {
    0.01
}

impl Default for NoveltyConfig {
    fn default() -> Self {
        NoveltyConfig {
            k: default_k(),
            p: default_p(),
            distance: Distance::default(),
        }
    }
}

impl NoveltyConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.k == 0 {
            return Err("novelty k must be at least 1".into());
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(format!("archive insertion probability {} is outside (0, 1]", self.p));
        }
        Ok(())
    }
}

/// Append-only store of behavior characteristics.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Archive {
    entries: Vec<Vec<f32>>,
}

impl Archive {
    pub fn new() -> Self {
        Archive::default()
    }

    pub fn from_entries(entries: Vec<Vec<f32>>) -> Self {
        Archive { entries }
    }

    pub fn entries(&self) -> &[Vec<f32>] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Appends `bc` iff `draw < p`; returns whether it was appended.
    pub fn maybe_insert(&mut self, bc: &[f32], draw: f64, p: f64) -> bool {
        let insert = draw < p;
        if insert {
            self.entries.push(bc.to_vec());
        }
        insert
    }
}

/// Mean distance from `bc` to its `k` nearest entries of `pool` (all of the
/// pool when it has fewer than `k` entries; infinite when it is empty). The
/// pool must not contain `bc`'s own entry.
pub fn novelty<'a, I>(bc: &[f32], pool: I, k: usize, distance: Distance) -> Result<f64, ShapeError>
where
    I: IntoIterator<Item = &'a [f32]>,
{
    let mut dists = Vec::new();
    for other in pool {
        if other.len() != bc.len() {
            return Err(ShapeError::Length {
                expected: bc.len(),
                got: other.len(),
            });
        }
        dists.push(distance.between(bc, other));
    }
    Ok(mean_of_smallest(&mut dists, k))
}

fn mean_of_smallest(dists: &mut [f64], k: usize) -> f64 {
    if dists.is_empty() {
        return f64::INFINITY;
    }
    let k = k.min(dists.len());
    if k < dists.len() {
        dists.select_nth_unstable_by(k - 1, f64::total_cmp);
    }
    let nearest = &mut dists[..k];
    nearest.sort_unstable_by(f64::total_cmp);
    nearest.iter().sum::<f64>() / k as f64
}

/// Novelty of every member against the archive plus all other members.
pub fn population_novelty(
    bcs: &[Vec<f32>],
    archive: &Archive,
    cfg: &NoveltyConfig,
) -> Result<Vec<f64>, ShapeError> {
    (0..bcs.len())
        .map(|i| {
            let pool = archive
                .entries()
                .iter()
                .chain(bcs[..i].iter())
                .chain(bcs[i + 1..].iter())
                .map(Vec::as_slice);
            novelty(&bcs[i], pool, cfg.k, cfg.distance)
        })
        .collect()
}

/// Archive sweep in member-index order. Member 0 (the carried elite) is never
/// a candidate, and draws one insertion value per other member.
pub fn archive_sweep(bcs: &[Vec<f32>], archive: &mut Archive, p: f64, rng: &mut SplitMix64) -> usize {
    let mut added = 0;
    for bc in bcs.iter().skip(1) {
        if archive.maybe_insert(bc, rng.next_f64(), p) {
            added += 1;
        }
    }
    added
}

/// Index of the highest-fitness entry; earliest wins ties. Reporting only.
pub fn best_reward_index(fitness: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, f) in fitness.iter().enumerate() {
        if best.is_none_or(|b| *f > fitness[b]) {
            best = Some(i);
        }
    }
    best
}
