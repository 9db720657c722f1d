use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller broke an operation's precondition (shape, sign, missing input).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {what} at iteration/layer {index}")]
    NonFinite { what: String, index: usize },

    #[error("training diverged beyond recovery at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("unsupported image: {0}")]
    UnsupportedImage(String),

    #[error("malformed {kind}: {msg}")]
    Format { kind: &'static str, msg: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn non_finite(what: impl Into<String>, index: usize) -> Self {
        Error::NonFinite {
            what: what.into(),
            index,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the numerics rather than by the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite { .. } | Error::Diverged { .. })
    }
}
