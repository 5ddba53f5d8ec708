use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failures decoding one of the binary file formats.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("backward called without a forward cache")]
    MissingForwardCache,
    #[error("non-finite gradient at index {index}: {value}")]
    NonFiniteGradient { index: usize, value: f64 },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("epoch {epoch}{}: {source}", client.map(|c| format!(", client {c}")).unwrap_or_default())]
    InEpoch {
        epoch: usize,
        client: Option<usize>,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn in_epoch(self, epoch: usize, client: Option<usize>) -> Self {
        Error::InEpoch {
            epoch,
            client,
            source: Box::new(self),
        }
    }

    /// Strips epoch/client context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::InEpoch { source, .. } => source.root(),
            other => other,
        }
    }
}

pub(crate) fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected,
            found,
        })
    }
}
