use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("size error: {0}")]
    Size(String),

    #[error("argument error: {0}")]
    Argument(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("compatibility error: {0}")]
    Compatibility(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    /// Spatial dimensions collapse to zero somewhere in the stack.
    #[error("validation error: shape collapse at `{layer}`: {message}")]
    ShapeCollapse { layer: String, message: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("isolation violation: {0}")]
    Isolation(String),

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("unknown preset `{name}` (valid: {valid})")]
    UnknownPreset { name: String, valid: String },

    #[error("in layer `{layer}`: {source}")]
    InLayer {
        layer: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn in_layer(self, layer: &str) -> Self {
        Error::InLayer {
            layer: layer.to_string(),
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping layer context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::InLayer { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
