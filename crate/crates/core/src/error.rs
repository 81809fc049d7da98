use std::path::PathBuf;

/// Errors raised anywhere in the conversion pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {layer}: {detail}")]
    Shape { layer: String, detail: String },

    #[error("layer {index} ({name}): {source}")]
    Layer {
        index: usize,
        name: String,
        #[source]
        source: Box<Error>,
    },

    #[error("missing blob \"{0}\"")]
    MissingBlob(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("unsupported format_version \"{found}\" (expected major {expected})")]
    Version { found: String, expected: u32 },

    #[error("dataset value {value} at index {index} is outside [0, 1]")]
    OutOfRange { index: usize, value: f32 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate layer {layer}: {detail}")]
    Degenerate { layer: String, detail: String },

    #[error("trace query: {0}")]
    Trace(String),

    #[error("report: {0}")]
    Report(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(layer: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Shape {
            layer: layer.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn in_layer(self, index: usize, name: &str) -> Self {
        Error::Layer {
            index,
            name: name.to_string(),
            source: Box::new(self),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True when the error comes from bad input data or configuration
    /// rather than a broken internal invariant.
    pub fn is_invariant_violation(&self) -> bool {
        match self {
            Error::Invariant(_) => true,
            Error::Layer { source, .. } => source.is_invariant_violation(),
            _ => false,
        }
    }
}
