use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or signal extents do not line up.
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("missing tensor `{0}` in weight set")]
    MissingTensor(String),

    #[error("tensor `{name}` has shape {found:?}, expected {expected:?}")]
    TensorShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("unexpected tensor `{0}` not described by the manifest")]
    UnexpectedTensor(String),

    #[error("weight archive: {0}")]
    Format(String),

    #[error("checksum mismatch in {region} (bytes {start}..{end}): stored {stored:#010x}, computed {computed:#010x}")]
    Checksum {
        region: String,
        start: u64,
        end: u64,
        stored: u32,
        computed: u32,
    },

    #[error("stream protocol: {0}")]
    Stream(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input data (as opposed to misuse of the API).
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Format(_)
                | Error::Checksum { .. }
                | Error::MissingTensor(_)
                | Error::TensorShape { .. }
                | Error::UnexpectedTensor(_)
                | Error::NonFinite(_)
                | Error::Io { .. }
                | Error::Wav { .. }
                | Error::Json(_)
        )
    }
}
