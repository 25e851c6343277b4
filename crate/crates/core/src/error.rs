use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid shape {0:?}: rank must be 1..=4 with every extent >= 1")]
    InvalidShape(Vec<usize>),

    #[error("shape {shape:?} needs {expected} elements, got {actual}")]
    LengthMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },

    #[error("{op}: axis {axis} out of range for rank {rank}")]
    InvalidAxis { op: &'static str, axis: usize, rank: usize },

    #[error("{op}: index {index} out of range (limit {limit})")]
    OutOfRange {
        op: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("{0}")]
    Invalid(String),

    #[error("scale {scale}: {source}")]
    AtScale { scale: usize, source: Box<Error> },

    #[error("stage {stage}: {source}")]
    AtStage { stage: &'static str, source: Box<Error> },

    #[error("non-finite loss term {term}: {value}")]
    NonFinite { term: String, value: f64 },

    #[error("format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    /// True for failures caused by the filesystem or a malformed file on disk.
    pub fn is_io(&self) -> bool {
        match self {
            Error::Io(_) | Error::Format(_) | Error::Json(_) => true,
            Error::AtScale { source, .. } | Error::AtStage { source, .. } => source.is_io(),
            _ => false,
        }
    }
}

pub(crate) trait ResultExt<T> {
    fn at_scale(self, scale: usize) -> Result<T>;
    fn at_stage(self, stage: &'static str) -> Result<T>;
}

impl<T> ResultExt<T> for Result<T> {
    fn at_scale(self, scale: usize) -> Result<T> {
        self.map_err(|e| Error::AtScale {
            scale,
            source: Box::new(e),
        })
    }

    fn at_stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| Error::AtStage {
            stage,
            source: Box::new(e),
        })
    }
}
