//! The v1 backend protocol: wire types, a typed client over pluggable
//! transports, deterministic mock backends and a standalone mock server.

mod client;
mod error;
pub mod golden;
pub mod mock;
pub mod protocol;
pub mod server;
mod transport;

pub use client::{inpaint_request, AnimateOutput, BackendClient, InpaintOutput};
pub use error::BackendError;
pub use protocol::{BackendRequest, BackendResponse, Op, PROTOCOL_VERSION};
pub use transport::{FnTransport, HttpTransport, MockTransport, RecordingTransport, Transport};
