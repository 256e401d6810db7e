//! Seed-chain genotypes.
//!
//! A genotype is an initialization seed, an ordered chain of mutation seeds and
//! the mutation power. The parameter vector is rebuilt by Xavier-initializing
//! from the first seed and then adding `sigma * noise(seed)` once per chain
//! entry, elementwise from index 0 upwards.
//!
//! Wire format ("DGN1"), all integers little-endian:
//!
//! ```text
//! 0..4    magic "DGN1"
//! 4       codec mode (0 = direct, 1 = hash-extended)
//! 5..13   sigma, IEEE-754 f64
//! 13..17  n = number of mutation seeds
//! 17..    n + 1 seeds as u32, init seed first
//! ```

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::noise::{hash_seed, Fnv1a, NoiseError, NoiseTable, Seed, SEED_MASK};
use crate::policy::{Network, PolicySpec, ShapeError};

pub const MAGIC: [u8; 4] = *b"DGN1";
pub const HEADER_LEN: usize = 17;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CodecMode {
    #[default]
    Direct,
    HashExtended,
}

impl CodecMode {
    pub fn to_byte(self) -> u8 {
        match self {
            CodecMode::Direct => 0,
            CodecMode::HashExtended => 1,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(CodecMode::Direct),
            1 => Some(CodecMode::HashExtended),
            _ => None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodecError {
    #[error("bad magic {0:02x?}, expected \"DGN1\"")]
    BadMagic([u8; 4]),
    #[error("genotype truncated: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("seed #{index} = {value:#x} exceeds 28 bits")]
    SeedOutOfRange { index: usize, value: u32 },
    #[error("unknown codec mode {0}")]
    BadMode(u8),
    #[error("mutation power must be positive and finite, got {0}")]
    BadSigma(f64),
    #[error("{0} trailing bytes after genotype")]
    TrailingBytes(usize),
}

impl CodecError {
    /// Stable numeric code, shared with the C interface.
    pub fn code(&self) -> i32 {
        match self {
            CodecError::BadMagic(_) => 10,
            CodecError::Truncated { .. } => 11,
            CodecError::SeedOutOfRange { .. } => 12,
            CodecError::BadMode(_) => 13,
            CodecError::BadSigma(_) => 14,
            CodecError::TrailingBytes(_) => 15,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReconstructError {
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

/// Compressed representation of a parameter vector.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Genotype {
    pub init_seed: Seed,
    pub mutation_seeds: Vec<Seed>,
    pub sigma: f64,
    #[serde(default)]
    pub mode: CodecMode,
}

impl fmt::Debug for Genotype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Genotype({}", self.init_seed)?;
        for s in &self.mutation_seeds {
            write!(f, ".{s}")?;
        }
        write!(f, "; sigma={}, {:?})", self.sigma, self.mode)
    }
}

impl Genotype {
    pub fn new(init_seed: Seed, sigma: f64, mode: CodecMode) -> Self {
        Genotype {
            init_seed,
            mutation_seeds: Vec::new(),
            sigma,
            mode,
        }
    }

    pub fn chain_len(&self) -> usize {
        self.mutation_seeds.len()
    }

    /// Child genotype: the parent's chain with `tau` appended.
    pub fn mutate(&self, tau: Seed) -> Genotype {
        let mut mutation_seeds = Vec::with_capacity(self.mutation_seeds.len() + 1);
        mutation_seeds.extend_from_slice(&self.mutation_seeds);
        mutation_seeds.push(tau);
        Genotype {
            mutation_seeds,
            ..*self
        }
    }

    /// The genotype one mutation earlier, if any.
    pub fn parent(&self) -> Option<Genotype> {
        let (_, rest) = self.mutation_seeds.split_last()?;
        Some(Genotype {
            mutation_seeds: rest.to_vec(),
            ..*self
        })
    }

    pub fn serialized_len(&self) -> usize {
        HEADER_LEN + 4 * (self.mutation_seeds.len() + 1)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.serialized_len());
        self.write_to(&mut out);
        out
    }

    pub fn write_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&MAGIC);
        out.push(self.mode.to_byte());
        out.extend_from_slice(&self.sigma.to_le_bytes());
        out.extend_from_slice(&(self.mutation_seeds.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.init_seed.value().to_le_bytes());
        for s in &self.mutation_seeds {
            out.extend_from_slice(&s.value().to_le_bytes());
        }
    }

    /// Parses exactly one genotype occupying all of `bytes`.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CodecError> {
        let (g, used) = Self::read_prefix(bytes)?;
        if used != bytes.len() {
            return Err(CodecError::TrailingBytes(bytes.len() - used));
        }
        Ok(g)
    }

    /// Parses a genotype from the start of `bytes`, returning it and its length.
    pub fn read_prefix(bytes: &[u8]) -> Result<(Self, usize), CodecError> {
        if bytes.len() < 4 {
            return Err(CodecError::Truncated {
                needed: HEADER_LEN,
                have: bytes.len(),
            });
        }
        let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(CodecError::BadMagic(magic));
        }
        if bytes.len() < HEADER_LEN {
            return Err(CodecError::Truncated {
                needed: HEADER_LEN,
                have: bytes.len(),
            });
        }
        let mode = CodecMode::from_byte(bytes[4]).ok_or(CodecError::BadMode(bytes[4]))?;
        let sigma = f64::from_le_bytes(bytes[5..13].try_into().unwrap());
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(CodecError::BadSigma(sigma));
        }
        let n = u32::from_le_bytes(bytes[13..17].try_into().unwrap()) as usize;
        let needed = HEADER_LEN + 4 * (n + 1);
        if bytes.len() < needed {
            return Err(CodecError::Truncated {
                needed,
                have: bytes.len(),
            });
        }
        let mut seeds = bytes[HEADER_LEN..needed]
            .chunks_exact(4)
            .enumerate()
            .map(|(index, c)| {
                let value = u32::from_le_bytes(c.try_into().unwrap());
                if value > SEED_MASK {
                    Err(CodecError::SeedOutOfRange { index, value })
                } else {
                    Ok(Seed::new(value).expect("checked"))
                }
            });
        let init_seed = seeds.next().expect("n + 1 >= 1")?;
        let mutation_seeds = seeds.collect::<Result<Vec<_>, _>>()?;
        Ok((
            Genotype {
                init_seed,
                mutation_seeds,
                sigma,
                mode,
            },
            needed,
        ))
    }
}

/// Applies one mutation step in place: `theta += sigma * noise(seed')`, where
/// `seed'` is `tau` itself (direct) or `hash_seed(digest(theta), tau)`.
pub fn apply_mutation(
    theta: &mut [f32],
    tau: Seed,
    sigma: f64,
    mode: CodecMode,
    table: &NoiseTable,
) -> Result<(), NoiseError> {
    let seed = match mode {
        CodecMode::Direct => tau,
        CodecMode::HashExtended => hash_seed(theta_digest(theta), tau),
    };
    let eps = table.slice(seed, theta.len())?;
    let s = sigma as f32;
    for (t, &e) in theta.iter_mut().zip(eps) {
        *t += s * e;
    }
    Ok(())
}

/// FNV-1a over the little-endian bytes of `theta`.
pub fn theta_digest(theta: &[f32]) -> u64 {
    let mut h = Fnv1a::new();
    h.write_f32s(theta);
    h.finish()
}

/// Rebuilds the parameter vector of `g` for a compiled network.
pub fn reconstruct_with(
    g: &Genotype,
    net: &Network,
    table: &NoiseTable,
) -> Result<Vec<f32>, NoiseError> {
    let mut theta = net.xavier_init(g.init_seed);
    for &tau in &g.mutation_seeds {
        apply_mutation(&mut theta, tau, g.sigma, g.mode, table)?;
    }
    Ok(theta)
}

pub fn reconstruct(
    g: &Genotype,
    spec: &PolicySpec,
    table: &NoiseTable,
) -> Result<Vec<f32>, ReconstructError> {
    let net = spec.compile()?;
    Ok(reconstruct_with(g, &net, table)?)
}

/// Uncompressed size (`4 * param_count`) over serialized size.
pub fn compression_ratio(g: &Genotype, spec: &PolicySpec) -> Result<f64, ShapeError> {
    Ok(ratio_for(spec.param_count()?, g))
}

pub fn ratio_for(param_count: usize, g: &Genotype) -> f64 {
    (param_count as f64 * 4.0) / g.serialized_len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seed(v: u32) -> Seed {
        Seed::new(v).unwrap()
    }

    fn genotype(n: usize) -> Genotype {
        let mut g = Genotype::new(seed(1), 0.005, CodecMode::Direct);
        for i in 0..n {
            g = g.mutate(seed(i as u32 * 7919 % SEED_MASK));
        }
        g
    }

    #[test]
    fn mutate_appends_and_keeps_parent() {
        let g = Genotype::new(seed(3), 0.1, CodecMode::Direct);
        let c = g.mutate(seed(5));
        assert_eq!(c.mutation_seeds, vec![seed(5)]);
        let c2 = c.mutate(seed(9));
        assert_eq!(c2.mutation_seeds, vec![seed(5), seed(9)]);
        let c3 = c2.mutate(seed(2));
        assert_eq!(c2.mutation_seeds, vec![seed(5), seed(9)]);
        assert_eq!(c3.mutation_seeds, vec![seed(5), seed(9), seed(2)]);
        assert_eq!(c3.parent().unwrap(), c2);
        assert!(g.parent().is_none());
    }

    #[test]
    fn serialized_sizes() {
        assert_eq!(genotype(0).to_bytes().len(), 21);
        assert_eq!(genotype(349).to_bytes().len(), 1_417);
        assert_eq!(genotype(349).serialized_len(), 17 + 4 * 350);
    }

    #[test]
    fn ratio_arithmetic() {
        let g = genotype(349);
        let r = ratio_for(4_000_000, &g);
        assert!((r - 11_291.46).abs() < 0.01, "{r}");
        let small = PolicySpec::mlp(4, &[], 2);
        let r = compression_ratio(&genotype(0), &small).unwrap();
        assert!((r - 40.0 / 21.0).abs() < 1e-12);
        let mut prev = f64::INFINITY;
        for n in 0..50 {
            let r = ratio_for(1000, &genotype(n));
            assert!(r < prev);
            prev = r;
        }
    }

    #[test]
    fn format_errors_have_distinct_codes() {
        let good = genotype(3).to_bytes();

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        let e1 = Genotype::from_bytes(&bad_magic).unwrap_err();
        assert!(matches!(e1, CodecError::BadMagic(_)));

        let e2 = Genotype::from_bytes(&good[..good.len() - 1]).unwrap_err();
        assert!(matches!(e2, CodecError::Truncated { .. }));

        let mut big_seed = good.clone();
        big_seed[HEADER_LEN + 4..HEADER_LEN + 8].copy_from_slice(&(1u32 << 28).to_le_bytes());
        let e3 = Genotype::from_bytes(&big_seed).unwrap_err();
        assert_eq!(
            e3,
            CodecError::SeedOutOfRange {
                index: 1,
                value: 1 << 28
            }
        );

        let mut bad_mode = good.clone();
        bad_mode[4] = 7;
        let e4 = Genotype::from_bytes(&bad_mode).unwrap_err();

        let codes = [e1.code(), e2.code(), e3.code(), e4.code()];
        let mut sorted = codes.to_vec();
        sorted.dedup();
        assert_eq!(sorted.len(), codes.len());
    }

    #[test]
    fn zero_mutations_reconstruct_to_init() {
        let spec = PolicySpec::mlp(6, &[5], 3);
        let table = NoiseTable::build(seed(7), 1000).unwrap();
        let g = Genotype::new(seed(42), 0.5, CodecMode::Direct);
        let theta = reconstruct(&g, &spec, &table).unwrap();
        assert_eq!(theta, crate::policy::xavier_init(&spec, seed(42)).unwrap());
    }

    #[test]
    fn vanishing_sigma_leaves_init() {
        let spec = PolicySpec::mlp(6, &[5], 3);
        let table = NoiseTable::build(seed(7), 1000).unwrap();
        let mut g = Genotype::new(seed(42), 1e-30, CodecMode::Direct);
        for s in [1, 2, 3] {
            g = g.mutate(seed(s));
        }
        let theta = reconstruct(&g, &spec, &table).unwrap();
        let init = crate::policy::xavier_init(&spec, seed(42)).unwrap();
        for (a, b) in theta.iter().zip(&init) {
            assert!((a - b).abs() <= 1e-20);
        }
    }

    #[test]
    fn one_step_difference_is_scaled_noise() {
        let spec = PolicySpec::mlp(10, &[8], 2);
        let n = spec.param_count().unwrap();
        let table = NoiseTable::build(seed(3), 5000).unwrap();
        let g = genotype(4);
        let parent = reconstruct(&g, &spec, &table).unwrap();
        let child = reconstruct(&g.mutate(seed(777)), &spec, &table).unwrap();
        // Independent recomputation: look up the slice by offset arithmetic.
        let offset = crate::noise::slice_offset(seed(777), n, 5000).unwrap();
        let eps = &table.values()[offset..offset + n];
        let s = g.sigma as f32;
        for i in 0..n {
            assert_eq!(child[i], parent[i] + s * eps[i]);
        }
    }

    #[test]
    fn hash_extended_mode_uses_remapped_seed() {
        let spec = PolicySpec::mlp(4, &[3], 2);
        let n = spec.param_count().unwrap();
        let table = NoiseTable::build(seed(3), 4096).unwrap();
        let g = Genotype::new(seed(8), 0.1, CodecMode::HashExtended).mutate(seed(5));
        let theta = reconstruct(&g, &spec, &table).unwrap();
        let mut expected = crate::policy::xavier_init(&spec, seed(8)).unwrap();
        let remapped = hash_seed(theta_digest(&expected), seed(5));
        let eps = table.slice(remapped, n).unwrap();
        for (t, e) in expected.iter_mut().zip(eps) {
            *t += 0.1f32 * e;
        }
        assert_eq!(theta, expected);
        let direct = Genotype {
            mode: CodecMode::Direct,
            ..g.clone()
        };
        assert_ne!(theta, reconstruct(&direct, &spec, &table).unwrap());
    }

    #[test]
    fn small_table_is_reported() {
        let spec = PolicySpec::mlp(10, &[10], 2);
        let table = NoiseTable::build(seed(3), 20).unwrap();
        let g = genotype(1);
        assert!(matches!(
            reconstruct(&g, &spec, &table),
            Err(ReconstructError::Noise(NoiseError::SliceTooLong { .. }))
        ));
    }

    fn arb_genotype() -> impl Strategy<Value = Genotype> {
        (
            0..=SEED_MASK,
            prop::collection::vec(0..=SEED_MASK, 0..1000),
            1e-6f64..10.0,
            any::<bool>(),
        )
            .prop_map(|(init, chain, sigma, hashed)| Genotype {
                init_seed: seed(init),
                mutation_seeds: chain.into_iter().map(seed).collect(),
                sigma,
                mode: if hashed {
                    CodecMode::HashExtended
                } else {
                    CodecMode::Direct
                },
            })
    }

    proptest! {
        #[test]
        fn codec_round_trip(g in arb_genotype()) {
            let bytes = g.to_bytes();
            prop_assert_eq!(bytes.len(), g.serialized_len());
            prop_assert_eq!(Genotype::from_bytes(&bytes).unwrap(), g);
        }

        #[test]
        fn lineage_is_additive(split in 0usize..6, chain in prop::collection::vec(0..=SEED_MASK, 0..6)) {
            let spec = PolicySpec::mlp(5, &[4], 2);
            let net = spec.compile().unwrap();
            let table = NoiseTable::build(seed(9), 2048).unwrap();
            let split = split.min(chain.len());
            let full = Genotype {
                init_seed: seed(17),
                mutation_seeds: chain.iter().copied().map(seed).collect(),
                sigma: 0.02,
                mode: CodecMode::Direct,
            };
            let prefix = Genotype { mutation_seeds: full.mutation_seeds[..split].to_vec(), ..full.clone() };
            let mut theta = reconstruct_with(&prefix, &net, &table).unwrap();
            for &tau in &full.mutation_seeds[split..] {
                apply_mutation(&mut theta, tau, full.sigma, full.mode, &table).unwrap();
            }
            prop_assert_eq!(theta, reconstruct_with(&full, &net, &table).unwrap());
        }
    }
}
