//! Framed binary link between base station and backpack.

pub mod frame;
pub mod link;
pub mod session;

pub use frame::{
    crc16, decode, encode, DecodeError, DecodeErrorKind, Decoded, EncodeError, ImuTelemetry, Message, StimMarker,
    StimRequest, StreamDecoder, MAGIC, MAX_PAYLOAD,
};
pub use link::{link_simulate, Delivered, Link, LinkConfig, LinkError};
pub use session::{reconstruct_trials, BackpackSession, Replay, SessionConfig, SessionStats, HEARTBEAT_PERIOD_MS};
