//! Wire messages, framing and the per-world sequencer shared by the server
//! and every client (bots included).

pub mod codec;
pub mod msg;
pub mod replica;
pub mod sequencer;

pub use codec::{decode, decode_str, encode, Malformed};
pub use msg::{ClientMsg, LogRecord, OpId, RejectReason, ServerMsg, WorldInfo};
pub use replica::{Applied, Replica};
pub use sequencer::{CatchUp, FutureSeq, Rejection, Sequenced, SequencerConfig, WorldSequencer};
