//! The reliable client-server control channel and its messages.

pub mod channel;
pub mod message;

pub use channel::{channel_keys, client_open, server_open, ControlEndpoint, ControlError, ControlEvent, Side};
pub use message::{ControlMessage, Direction, MessageError, MessageStream, Metadata, PROTO_VERSION};
