//! Growing neural cellular automata.
//!
//! A 16-channel cell grid updated by a small learned network, trained by
//! backpropagation through unrolled rollouts to grow a target image from a
//! single seed cell and to regrow it after damage. The crate also carries the
//! checkpoint format, stability evaluation, and a shooter game whose enemy is
//! a regenerating automaton.

pub mod eval;
pub mod game;
pub mod grid;
mod kernel;
pub mod model;
pub mod persistence;
pub mod train;

pub use grid::{AliveMask, BinaryStateArray, CellGrid, CHANNELS};
pub use model::{perceive, PerceptionField, UpdateRule};

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{}: file not found", path.display())]
    NotFound { path: PathBuf },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error("unsupported checkpoint version {found:?} (expected {expected})")]
    Version { found: String, expected: u32 },
    #[error("checkpoint field {field}: expected {expected} bytes, found {found}")]
    BlobLength {
        field: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("checkpoint field {field}: non-finite value at index {index}")]
    NonFinite { field: &'static str, index: usize },
    #[error("{}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("target image is {width}x{height}, larger than the {size}x{size} grid")]
    TargetTooLarge { width: u32, height: u32, size: usize },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
