//! Client and server message schemas. See `docs/protocol.md`.

use blocks_core::world::InfoCounts;
use blocks_core::{
    Block, BlockId, CellPos, Color, Cursor, LocationMode, Millis, Pose, Ray, Seq, SizeClass,
    UserId, WorldEvent, WorldId, WorldKind,
};
use serde::{Deserialize, Serialize};

/// Client-chosen nonce identifying a mutating command for deduplication.
pub type OpId = u64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "t")]
pub enum ClientMsg {
    /// First message on a connection. Fresh installs send no id and get one minted.
    Hello {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        user: Option<UserId>,
    },
    /// Join (or re-sync with) a world. `since` asks for events after that seq.
    JoinWorld {
        world: WorldId,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        since: Option<Seq>,
    },
    AddBlock {
        op: OpId,
        pos: CellPos,
        size: SizeClass,
        rgb: Color,
    },
    DeleteBlock {
        op: OpId,
        block: BlockId,
    },
    Undo {
        op: OpId,
    },
    CursorUpdate {
        ray: Ray,
        size: SizeClass,
        rgb: Color,
    },
    MarkerObserved {
        marker: String,
        pose: Pose,
        at: Millis,
    },
    Leave,
}

impl ClientMsg {
    pub fn op_id(&self) -> Option<OpId> {
        match self {
            ClientMsg::AddBlock { op, .. }
            | ClientMsg::DeleteBlock { op, .. }
            | ClientMsg::Undo { op } => Some(*op),
            _ => None,
        }
    }

    /// Commands that go through the sequencer's dedup and gating.
    pub fn is_mutating(&self) -> bool {
        self.op_id().is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldInfo {
    pub id: WorldId,
    pub kind: WorldKind,
    pub location: LocationMode,
}

/// One sequenced event, exactly as persisted in a world's log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub seq: Seq,
    /// Server time the event was sequenced.
    pub at: Millis,
    pub origin: UserId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub op: Option<OpId>,
    pub ev: WorldEvent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Occupied,
    OutOfBounds,
    NotFound,
    NothingToUndo,
    Gated,
    Malformed,
    NotJoined,
    UnknownWorld,
    FutureSeq,
    /// The world's storage failed; it no longer accepts writes.
    Unavailable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "t")]
pub enum ServerMsg {
    Welcome {
        user: UserId,
        personal: WorldId,
        worlds: Vec<WorldInfo>,
    },
    Snapshot {
        world: WorldId,
        seq: Seq,
        blocks: Vec<Block>,
        info: InfoCounts,
    },
    /// Retained events `(since, seq]` in order.
    CatchUp {
        world: WorldId,
        events: Vec<LogRecord>,
    },
    Event {
        world: WorldId,
        #[serde(flatten)]
        record: LogRecord,
    },
    Presence {
        world: WorldId,
        users: Vec<UserId>,
        cursors: Vec<Cursor>,
    },
    Reject {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        op: Option<OpId>,
        reason: RejectReason,
        #[serde(default, skip_serializing_if = "String::is_empty")]
        detail: String,
    },
}

impl ServerMsg {
    pub fn reject(op: Option<OpId>, reason: RejectReason, detail: impl Into<String>) -> Self {
        ServerMsg::Reject { op, reason, detail: detail.into() }
    }
}
