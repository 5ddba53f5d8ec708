use fedembed::FormatError;

#[derive(Debug, thiserror::Error)]
pub enum WireError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("peer {peer} closed the connection")]
    Disconnected { peer: String },
    #[error("frame of {len} bytes exceeds the {max}-byte limit")]
    Oversize { len: usize, max: usize },
    #[error("malformed frame: {0}")]
    Format(#[from] FormatError),
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("peer reported an error: {0}")]
    Remote(String),
    #[error("timed out after {0:?} waiting for {1}")]
    Timeout(std::time::Duration, String),
    #[error(transparent)]
    Core(#[from] fedembed::Error),
}

pub(crate) fn protocol(msg: impl Into<String>) -> WireError {
    WireError::Protocol(msg.into())
}
