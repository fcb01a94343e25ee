//! Line-oriented sidecar protocol that lets an external stimulus engine
//! drive a session. See `docs/protocol.md` for the message catalogue.

mod message;
mod server;

pub use message::{
    decode, encode, salvage_tag, Frame, Message, ProtocolError, MAX_LINE_BYTES, PROTOCOL_VERSION,
};
pub use server::{exit_code_for, serve, serve_stream, Transport};
