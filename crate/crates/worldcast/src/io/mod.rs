//! File formats: point clouds, trajectories, float and integer images,
//! network weights, and the project manifest tying a run together.
//!
//! All formats are written deterministically: the same in-memory state
//! always produces byte-identical files.

use std::path::PathBuf;
use thiserror::Error;

mod images;
mod manifest;
mod pfm;
mod ply;
mod trajectory;
mod weights;

pub use images::{read_pbm, read_pgm, read_ppm, write_pbm, write_pgm, write_ppm};
pub use manifest::ProjectManifest;
pub use pfm::{read_pfm, write_pfm, PfmImage};
pub use ply::{read_ply, write_ply};
pub use trajectory::{read_trajectory, write_trajectory};
pub use weights::{load_weights, save_weights, store_weights, WeightsManifest};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("i/o on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{0}")]
    Format(String),
    #[error("rotation at pose {index} is not orthonormal within 1e-6 (error {error:.3e})")]
    NotARotation { index: usize, error: f64 },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Invalid(String),
}

impl IoError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        IoError::Io { path: path.into(), source }
    }

    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        IoError::Parse { line, message: message.into() }
    }
}
