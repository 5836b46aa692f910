use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("empty selection: {0}")]
    EmptySelection(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("nothing to undo")]
    NothingToUndo,

    #[error("singular transform")]
    SingularTransform,

    #[error("unsupported version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error("malformed {what}: {detail}")]
    Format { what: String, detail: String },

    #[error("missing feature maps: {0}")]
    MissingFeatures(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable identifier, used by the HTTP service and CLI.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::GeometryMismatch(_) => "geometry_mismatch",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::EmptySelection(_) => "empty_selection",
            Error::InsufficientData(_) => "insufficient_data",
            Error::NothingToUndo => "nothing_to_undo",
            Error::SingularTransform => "singular_transform",
            Error::VersionMismatch { .. } => "version_mismatch",
            Error::MissingFile(_) => "missing_file",
            Error::Format { .. } => "format",
            Error::MissingFeatures(_) => "missing_features",
            Error::Io(_) => "io",
        }
    }

    /// Validation failures are caller mistakes; everything else is a runtime fault.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io(_))
    }

    pub(crate) fn format(what: impl Into<String>, detail: impl ToString) -> Self {
        Error::Format { what: what.into(), detail: detail.to_string() }
    }
}
