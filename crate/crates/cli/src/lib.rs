//! Library half of the `cbe` binary: configuration loading, artifact
//! manifests with content-hash caching, and the pipeline stages each
//! subcommand drives. Kept as a library so integration tests can exercise
//! the cache-key arithmetic directly.

pub mod artifacts;
pub mod cells;
pub mod config;
pub mod stages;

use std::path::PathBuf;

use thiserror::Error;

/// Everything the binary can fail with; each variant maps to a stable
/// machine-readable kind token in the single-line error output.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Corpus(#[from] cbe_core::corpus::CorpusError),
    #[error(transparent)]
    Kg(#[from] cbe_core::kgstore::KgError),
    #[error(transparent)]
    Linker(#[from] cbe_core::linker::LinkerError),
    #[error(transparent)]
    Walk(#[from] cbe_core::walks::WalkError),
    #[error(transparent)]
    Embed(#[from] cbe_core::embed::EmbedError),
    #[error(transparent)]
    Fusion(#[from] cbe_core::fusion::FusionError),
    #[error(transparent)]
    Learn(#[from] cbe_core::learn::LearnError),
    #[error(transparent)]
    Eval(#[from] cbe_core::eval::EvalError),
    #[error("{0}")]
    Artifact(String),
}

impl CliError {
    /// Stable token identifying the error family in machine-parsable output.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io { .. } => "io",
            CliError::Corpus(_) => "corpus",
            CliError::Kg(_) => "kg",
            CliError::Linker(_) => "linker",
            CliError::Walk(_) => "walk",
            CliError::Embed(_) => "embed",
            CliError::Fusion(_) => "fusion",
            CliError::Learn(_) => "learn",
            CliError::Eval(_) => "eval",
            CliError::Artifact(_) => "artifact",
        }
    }
}

/// Flattens a message onto one line so errors stay machine-parsable.
pub fn escape_message(msg: &str) -> String {
    msg.replace('\\', "\\\\")
        .replace('\t', "\\t")
        .replace('\n', "\\n")
        .replace('\r', "\\r")
}

/// Reads a file with the path attached to any failure.
pub fn read_file(path: &std::path::Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes a file with the path attached to any failure.
pub fn write_file(path: &std::path::Path, content: &str) -> Result<(), CliError> {
    std::fs::write(path, content).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}
