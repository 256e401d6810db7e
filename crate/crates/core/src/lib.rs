//! Deep GA: a gradient-free genetic algorithm for fixed-topology neural network
//! policies, with seed-chain genotypes, novelty search, a random-search
//! baseline and a master/worker evaluation harness.

pub mod checkpoint;
pub mod config;
pub mod env;
pub mod eval;
pub mod evolution;
pub mod genome;
pub mod incremental;
pub mod master;
pub mod noise;
pub mod novelty;
pub mod policy;
pub mod train;
pub mod wire;
pub mod worker;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Noise(#[from] noise::NoiseError),
    #[error(transparent)]
    Shape(#[from] policy::ShapeError),
    #[error(transparent)]
    Codec(#[from] genome::CodecError),
    #[error(transparent)]
    Reconstruct(#[from] genome::ReconstructError),
    #[error(transparent)]
    Map(#[from] env::maze::MapError),
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Wire(#[from] wire::WireError),
    #[error(transparent)]
    Checkpoint(#[from] checkpoint::CheckpointError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
