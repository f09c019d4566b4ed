//! File formats, trace ingestion, the gamma-sweep harness and the command
//! line front end for `recourse-core`.

pub mod bench;
pub mod cli;
pub mod schema;
pub mod traces;

pub use recourse_core::rng::random_strategy;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{file}:{line}:{column}: {msg}")]
    Json { file: String, line: usize, column: usize, msg: String },
    #[error("{file}: {msg}")]
    Schema { file: String, msg: String },
    #[error("traces, line {line}: {msg}")]
    Trace { line: usize, msg: String },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] recourse_core::Error),
}
