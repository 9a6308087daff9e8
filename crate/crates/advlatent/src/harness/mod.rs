//! Distributed inference over a real byte stream, plus the interception
//! harness that attacks it.
//!
//! The wire format is deliberately tiny: length-prefixed messages, each
//! carrying either a latent tensor frame or an edge reply. Endpoints run in
//! lockstep with one frame in flight, which keeps sessions reproducible and
//! makes the wire attack results comparable bit for bit with their
//! in-process counterparts.

mod endpoints;
mod frame;
mod wire;

pub use endpoints::{
    run_interceptor_session, run_mobile_session, serve_edge_session, InterceptPlan,
    InterceptReport, MobileOutcome, WireLabelOracle, WireScoreOracle,
};
pub use frame::{decode_frame, encode_frame, FrameTensor, FRAME_MAGIC, FRAME_VERSION, MAX_RANK};
pub use wire::{read_msg, write_msg, EdgeReply, MAX_MESSAGE};
