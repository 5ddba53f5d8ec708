//! TCP transport for the federated protocol.
//!
//! The server and every client run the same state machines as the
//! in-process simulator ([`fedembed::federation::ServerState`] and
//! [`fedembed::federation::ClientState`]); this crate only moves parameters
//! between them. Only parameters, loss summaries and configuration cross the
//! wire, never samples.
//!
//! # Framing
//!
//! Every message is one frame, all integers little endian:
//!
//! | field    | size | meaning                                         |
//! |----------|------|-------------------------------------------------|
//! | length   | u32  | byte count of everything after this field       |
//! | type     | u8   | [`MessageType`]                                 |
//! | epoch    | u32  | global epoch the message belongs to             |
//! | client   | u16  | client id (sender or recipient)                 |
//! | payload  | ...  | type-specific                                   |
//! | crc      | u32  | CRC32 of all preceding bytes, length included   |
//!
//! Frames larger than the configured maximum are rejected before any
//! payload is read.

mod client;
mod error;
mod frame;
mod message;
mod server;

pub use client::{run_client, ClientOptions, ClientReport};
pub use error::WireError;
pub use frame::{read_frame, write_frame, Frame, MessageType, DEFAULT_MAX_FRAME, FRAME_OVERHEAD};
pub use message::{decode_param_block, encode_param_block, Message};
pub use server::{serve, EpochReport, ServeReport, ServerOptions};

pub type Result<T, E = WireError> = std::result::Result<T, E>;
