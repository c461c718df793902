use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to ingest {path}: {reason}")]
    Ingestion { path: PathBuf, reason: String },

    #[error("corrupt record {record} in {path}: {reason}")]
    CorruptRecord {
        path: PathBuf,
        record: usize,
        reason: String,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: String,
        expected: String,
        got: String,
    },

    #[error("unsupported stitch geometry: {0}")]
    UnsupportedGeometry(String),

    #[error("cannot assemble stitched network: {0}")]
    Assembly(String),

    #[error("training diverged at step {step} (loss = {loss})")]
    TrainingFailure { step: usize, loss: f64 },

    #[error("internal invariant violated: {0}")]
    InvariantViolation(String),

    #[error("incompatible checkpoint {path}: schema version {found}, expected {expected}")]
    Incompatible {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("malformed {what} at line {line}: {reason}")]
    Parse {
        what: String,
        line: u64,
        reason: String,
    },

    #[error("matrix is incomplete; holes at {}", format_cells(.0))]
    IncompleteMatrix(Vec<(usize, usize)>),

    #[error("missing checkpoints: {}", .0.join(", "))]
    MissingCheckpoints(Vec<String>),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("image encoding failed: {0}")]
    Image(#[from] image::ImageError),
}

fn format_cells(cells: &[(usize, usize)]) -> String {
    cells
        .iter()
        .map(|(i, j)| format!("({i},{j})"))
        .collect::<Vec<_>>()
        .join(" ")
}

impl Error {
    pub(crate) fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> Error {
        let context = context.into();
        move |source| Error::Io { context, source }
    }

    pub(crate) fn shape(
        context: impl Into<String>,
        expected: impl std::fmt::Debug,
        got: impl std::fmt::Debug,
    ) -> Error {
        Error::Shape {
            context: context.into(),
            expected: format!("{expected:?}"),
            got: format!("{got:?}"),
        }
    }
}
