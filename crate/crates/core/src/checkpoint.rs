//! "DGAC" checkpoints: the config snapshot plus the full coordinator state.
//!
//! Layout (little-endian): magic `DGAC`, version u16, config TOML (u32 length
//! + UTF-8), mode u8, deterministic u8, generation u32, frames u64,
//! evaluations u64, elapsed seconds f64, six stream states u64, population
//! (u32 count, members), archive (u32 count, u16 dimension, f32 values), best
//! member (u8 flag, member). A member is a u32-length-prefixed DGN1 blob,
//! fitness f64, novelty f64, and a u16-count BC of f32 values.

use std::path::Path;

use thiserror::Error;

use crate::config::ExperimentConfig;
use crate::evolution::{Member, Mode, RunState, SeedStreams};
use crate::genome::{CodecError, Genotype};
use crate::novelty::Archive;

pub const MAGIC: [u8; 4] = *b"DGAC";
pub const VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0}")]
    Version(u16),
    #[error("checkpoint truncated")]
    Truncated,
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("genotype: {0}")]
    Genotype(#[from] CodecError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// A resumable snapshot.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ExperimentConfig,
    pub state: RunState,
    pub elapsed_seconds: f64,
}

fn put_member(out: &mut Vec<u8>, m: &Member) {
    let blob = m.genotype.to_bytes();
    out.extend_from_slice(&(blob.len() as u32).to_le_bytes());
    out.extend_from_slice(&blob);
    out.extend_from_slice(&m.fitness.to_le_bytes());
    out.extend_from_slice(&m.novelty.to_le_bytes());
    out.extend_from_slice(&(m.bc.len() as u16).to_le_bytes());
    for v in &m.bc {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.bytes.len() - self.pos < n {
            return Err(CheckpointError::Truncated);
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], CheckpointError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, CheckpointError> {
        Ok(self
            .take(4 * n)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn member(&mut self) -> Result<Member, CheckpointError> {
        let len = self.u32()? as usize;
        let genotype = Genotype::from_bytes(self.take(len)?)?;
        let fitness = self.f64()?;
        let novelty = self.f64()?;
        let n = self.u16()? as usize;
        Ok(Member {
            genotype,
            fitness,
            bc: self.f32s(n)?,
            novelty,
        })
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let s = &self.state;
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let toml = self.config.to_toml();
        out.extend_from_slice(&(toml.len() as u32).to_le_bytes());
        out.extend_from_slice(toml.as_bytes());
        out.push(s.mode.to_byte());
        out.push(u8::from(s.deterministic));
        out.extend_from_slice(&s.generation.to_le_bytes());
        out.extend_from_slice(&s.frames.to_le_bytes());
        out.extend_from_slice(&s.evaluations.to_le_bytes());
        out.extend_from_slice(&self.elapsed_seconds.to_le_bytes());
        for st in s.streams.states() {
            out.extend_from_slice(&st.to_le_bytes());
        }
        out.extend_from_slice(&(s.population.len() as u32).to_le_bytes());
        for m in &s.population {
            put_member(&mut out, m);
        }
        let entries = s.archive.entries();
        let dim = entries.first().map_or(0, Vec::len);
        out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
        out.extend_from_slice(&(dim as u16).to_le_bytes());
        for e in entries {
            for v in e {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        match &s.best {
            Some(m) => {
                out.push(1);
                put_member(&mut out, m);
            }
            None => out.push(0),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.array()?;
        if magic != MAGIC {
            return Err(CheckpointError::BadMagic(magic));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let len = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(len)?)
            .map_err(|e| CheckpointError::Corrupt(format!("config is not UTF-8: {e}")))?;
        let config =
            ExperimentConfig::parse(text).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        let mode_byte = r.u8()?;
        let mode = Mode::from_byte(mode_byte)
            .ok_or_else(|| CheckpointError::Corrupt(format!("unknown mode {mode_byte}")))?;
        if mode != config.mode {
            return Err(CheckpointError::Corrupt("mode disagrees with the config".into()));
        }
        let deterministic = r.u8()? != 0;
        let generation = r.u32()?;
        let frames = r.u64()?;
        let evaluations = r.u64()?;
        let elapsed_seconds = r.f64()?;
        let mut states = [0u64; SeedStreams::COUNT];
        for s in &mut states {
            *s = r.u64()?;
        }
        let n = r.u32()? as usize;
        let population = (0..n).map(|_| r.member()).collect::<Result<Vec<_>, _>>()?;
        let count = r.u32()? as usize;
        let dim = r.u16()? as usize;
        let entries = (0..count).map(|_| r.f32s(dim)).collect::<Result<Vec<_>, _>>()?;
        let best = match r.u8()? {
            0 => None,
            1 => Some(r.member()?),
            other => return Err(CheckpointError::Corrupt(format!("bad best flag {other}"))),
        };
        if r.pos != bytes.len() {
            return Err(CheckpointError::Corrupt("trailing bytes".into()));
        }
        let state = RunState {
            mode,
            ga: config.ga.clone(),
            novelty: config.novelty.clone(),
            deterministic,
            generation,
            population,
            archive: Archive::from_entries(entries),
            streams: SeedStreams::from_states(states),
            frames,
            evaluations,
            best,
        };
        Ok(Checkpoint {
            config,
            state,
            elapsed_seconds,
        })
    }

    /// Writes atomically: to a temporary sibling, then renamed into place.
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let tmp = path.with_extension("dgac.tmp");
        std::fs::write(&tmp, self.to_bytes())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
