//! Deterministic pseudo-randomness shared by every evaluator.
//!
//! All randomness in a run flows from [`SplitMix64`]: the Gaussian noise table,
//! the offset a seed selects inside that table, Xavier initialization and the
//! coordinator's seed streams. Gaussian values come from an inverse-CDF rational
//! approximation (Wichura's AS241) applied to integer-derived uniforms, so the
//! table is bitwise reproducible for a given `(master_seed, size)`.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of significant bits in a [`Seed`].
pub const SEED_BITS: u32 = 28;
/// Mask selecting the low [`SEED_BITS`] bits.
pub const SEED_MASK: u32 = (1 << SEED_BITS) - 1;

/// Default noise table length (2^25 single-precision values, 128 MiB).
pub const DEFAULT_TABLE_SIZE: usize = 1 << 25;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NoiseError {
    #[error("noise table size must be at least 1")]
    InvalidSize,
    #[error("slice of length {len} does not fit in a table of {table_len} values")]
    SliceTooLong { len: usize, table_len: usize },
    #[error("seed {0} does not fit in 28 bits")]
    SeedOutOfRange(u64),
}

/// A 28-bit seed, stored in a 32-bit field with the top four bits clear.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct Seed(u32);

impl Seed {
    pub const MAX: Seed = Seed(SEED_MASK);

    pub fn new(value: u32) -> Result<Self, NoiseError> {
        if value > SEED_MASK {
            return Err(NoiseError::SeedOutOfRange(u64::from(value)));
        }
        Ok(Seed(value))
    }

    /// Keeps the low 28 bits of `value`.
    pub fn truncate(value: u64) -> Self {
        Seed((value as u32) & SEED_MASK)
    }

    pub fn value(self) -> u32 {
        self.0
    }
}

impl TryFrom<u32> for Seed {
    type Error = NoiseError;

    fn try_from(value: u32) -> Result<Self, Self::Error> {
        Seed::new(value)
    }
}

impl From<Seed> for u32 {
    fn from(seed: Seed) -> u32 {
        seed.0
    }
}

impl fmt::Display for Seed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// The SplitMix64 output function applied to an arbitrary 64-bit word.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// SplitMix64 (Steele, Lea & Flood), the reference 64-bit construction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(state: u64) -> Self {
        SplitMix64 { state }
    }

    pub fn state(&self) -> u64 {
        self.state
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// Uniform in the open interval (0, 1) with 53 bits of resolution.
    #[inline]
    pub fn next_open01(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [0, 1).
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform index in `[0, bound)` by multiply-shift. `bound` must be non-zero.
    #[inline]
    pub fn next_below(&mut self, bound: u64) -> u64 {
        ((u128::from(self.next_u64()) * u128::from(bound)) >> 64) as u64
    }

    /// Standard normal draw in double precision.
    #[inline]
    pub fn next_gaussian(&mut self) -> f64 {
        inverse_normal_cdf(self.next_open01())
    }

    pub fn next_seed(&mut self) -> Seed {
        Seed::truncate(self.next_u64() >> 36)
    }
}

/// Inverse of the standard normal CDF for `p` in (0, 1).
///
/// Wichura's AS241 (PPND16), accurate to about 1e-16 relative.
pub fn inverse_normal_cdf(p: f64) -> f64 {
    const SPLIT1: f64 = 0.425;
    const SPLIT2: f64 = 5.0;
    const CONST1: f64 = 0.180625;
    const CONST2: f64 = 1.6;

    const A: [f64; 8] = [
        3.387_132_872_796_366_608_0e0,
        1.331_416_678_917_843_774_5e2,
        1.971_590_950_306_551_442_7e3,
        1.373_169_376_550_946_112_5e4,
        4.592_195_393_154_987_145_7e4,
        6.726_577_092_700_870_085_3e4,
        3.343_057_558_358_812_810_5e4,
        2.509_080_928_730_122_672_7e3,
    ];
    const B: [f64; 8] = [
        1.0,
        4.231_333_070_160_091_125_2e1,
        6.871_870_074_920_579_083_0e2,
        5.394_196_021_424_751_107_7e3,
        2.121_379_430_158_659_586_7e4,
        3.930_789_580_009_271_061_0e4,
        2.872_908_573_572_194_267_4e4,
        5.226_495_278_852_854_561_0e3,
    ];
    const C: [f64; 8] = [
        1.423_437_110_749_683_577_34e0,
        4.630_337_846_156_545_295_90e0,
        5.769_497_221_460_691_405_50e0,
        3.647_848_324_763_204_605_04e0,
        1.270_458_252_452_368_382_58e0,
        2.417_807_251_774_506_117_70e-1,
        2.272_384_498_926_918_458_33e-2,
        7.745_450_142_783_414_076_40e-4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.053_191_626_637_758_821_87e0,
        1.676_384_830_183_803_849_40e0,
        6.897_673_349_851_000_045_50e-1,
        1.481_039_764_274_800_745_90e-1,
        1.519_866_656_361_645_719_66e-2,
        5.475_938_084_995_344_946_00e-4,
        1.050_750_071_644_416_843_24e-9,
    ];
    const E: [f64; 8] = [
        6.657_904_643_501_103_777_20e0,
        5.463_784_911_164_114_369_90e0,
        1.784_826_539_917_291_335_80e0,
        2.965_605_718_285_048_912_30e-1,
        2.653_218_952_657_612_309_30e-2,
        1.242_660_947_388_078_438_60e-3,
        2.711_555_568_743_487_578_15e-5,
        2.010_334_399_292_288_132_65e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        5.998_322_065_558_879_376_90e-1,
        1.369_298_809_227_358_053_10e-1,
        1.487_536_129_085_061_485_25e-2,
        7.868_691_311_456_132_591_00e-4,
        1.846_318_317_510_054_681_80e-5,
        1.421_511_758_316_445_888_70e-7,
        2.044_263_103_389_939_785_64e-15,
    ];

    #[inline]
    fn horner(c: &[f64; 8], x: f64) -> f64 {
        c.iter().rev().fold(0.0, |acc, &k| acc * x + k)
    }

    let q = p - 0.5;
    if q.abs() <= SPLIT1 {
        let r = CONST1 - q * q;
        return q * horner(&A, r) / horner(&B, r);
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-tail.ln()).sqrt();
    let value = if r <= SPLIT2 {
        r -= CONST2;
        horner(&C, r) / horner(&D, r)
    } else {
        r -= SPLIT2;
        horner(&E, r) / horner(&F, r)
    };
    if q < 0.0 {
        -value
    } else {
        value
    }
}

/// 64-bit FNV-1a over a byte slice.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = Fnv1a::new();
    hash.write(bytes);
    hash.finish()
}

/// Incremental 64-bit FNV-1a.
#[derive(Clone, Copy, Debug)]
pub struct Fnv1a(u64);

impl Fnv1a {
    const OFFSET: u64 = 0xCBF2_9CE4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01B3;

    pub fn new() -> Self {
        Fnv1a(Self::OFFSET)
    }

    #[inline]
    pub fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(Self::PRIME);
        }
    }

    pub fn write_f32s(&mut self, values: &[f32]) {
        for v in values {
            self.write(&v.to_le_bytes());
        }
    }

    pub fn finish(self) -> u64 {
        self.0
    }
}

impl Default for Fnv1a {
    fn default() -> Self {
        Self::new()
    }
}

/// Large read-only table of standard-normal single-precision values.
#[derive(Clone, PartialEq)]
pub struct NoiseTable {
    master_seed: Seed,
    values: Vec<f32>,
}

impl fmt::Debug for NoiseTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NoiseTable")
            .field("master_seed", &self.master_seed)
            .field("len", &self.values.len())
            .finish()
    }
}

impl NoiseTable {
    pub fn build(master_seed: Seed, size: usize) -> Result<Self, NoiseError> {
        if size == 0 {
            return Err(NoiseError::InvalidSize);
        }
        let mut rng = SplitMix64::new(u64::from(master_seed.value()));
        let values = (0..size).map(|_| rng.next_gaussian() as f32).collect();
        Ok(NoiseTable {
            master_seed,
            values,
        })
    }

    pub fn master_seed(&self) -> Seed {
        self.master_seed
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Start of the run of `len` values selected by `seed`.
    pub fn offset(&self, seed: Seed, len: usize) -> Result<usize, NoiseError> {
        slice_offset(seed, len, self.values.len())
    }

    /// The contiguous run `table[offset .. offset + len]` selected by `seed`.
    pub fn slice(&self, seed: Seed, len: usize) -> Result<&[f32], NoiseError> {
        let offset = self.offset(seed, len)?;
        Ok(&self.values[offset..offset + len])
    }

    /// FNV-1a over the little-endian bytes of every value.
    pub fn checksum(&self) -> u64 {
        let mut hash = Fnv1a::new();
        hash.write_f32s(&self.values);
        hash.finish()
    }
}

/// `G(seed) mod (table_len - len + 1)`, where `G` is the first SplitMix64 output
/// for state `seed`. Slices never wrap.
pub fn slice_offset(seed: Seed, len: usize, table_len: usize) -> Result<usize, NoiseError> {
    if len > table_len {
        return Err(NoiseError::SliceTooLong { len, table_len });
    }
    let span = (table_len - len + 1) as u64;
    let g = SplitMix64::new(u64::from(seed.value())).next_u64();
    Ok((g % span) as usize)
}

/// Maps a parent digest and a chain seed to a fresh 28-bit seed.
pub fn hash_seed(theta_digest: u64, tau: Seed) -> Seed {
    let word = theta_digest ^ mix64(u64::from(tau.value()).wrapping_add(GOLDEN_GAMMA));
    Seed::truncate(mix64(word.wrapping_add(GOLDEN_GAMMA)) >> 36)
}
