//! Dataset ingestion, the filter loop, evaluation and batch runs.

pub mod config;
pub mod csvio;
pub mod evaluate;
pub mod run;
pub mod sweep;

use std::path::PathBuf;

use thiserror::Error;

pub use config::RunConfig;
pub use csvio::TrajectoryPoint;
pub use evaluate::{evaluate, MetricsReport};
pub use run::{run_filter, RunOutput, RunStats};

/// Largest tolerated gap between consecutive samples of either stream (s).
pub const MAX_STREAM_GAP: f64 = 0.5;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}: line {line}: {msg}")]
    Schema { file: String, line: usize, msg: String },
    #[error("{file}: line {line}: timestamp {t} does not increase")]
    NonMonotonic { file: String, line: usize, t: f64 },
    #[error("{file}: line {line}: column `{column}` is not a finite number")]
    NotFinite { file: String, line: usize, column: String },
    #[error("{stream} stream has a {gap:.3} s gap at t = {t:.3}")]
    Gap { stream: &'static str, t: f64, gap: f64 },
    #[error("{0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl PipelineError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}
