//! Per-world total ordering of mutating commands.
//!
//! A [`WorldSequencer`] is the single writer for one world. It validates a
//! command against the world state machine, and on success the event takes
//! the next sequence number. Commands are deduplicated on `(origin, op)` so a
//! client may resend anything it has not seen acknowledged.

use std::collections::{HashMap, VecDeque};

use blocks_core::anchor::{gate_access, Access, DEFAULT_FRESHNESS_MS};
use blocks_core::{Block, Millis, Seq, UserId, WorldError, WorldEvent, WorldState};
use thiserror::Error;

use crate::msg::{ClientMsg, LogRecord, OpId, RejectReason};

pub const DEFAULT_RETENTION: usize = 10_000;
pub const DEFAULT_DEDUP_WINDOW: usize = 1_024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SequencerConfig {
    /// Number of most recent events kept for catch-up.
    pub retention: usize,
    /// Op ids remembered per user.
    pub dedup_window: usize,
    pub freshness_ms: Millis,
}

impl Default for SequencerConfig {
    fn default() -> Self {
        Self {
            retention: DEFAULT_RETENTION,
            dedup_window: DEFAULT_DEDUP_WINDOW,
            freshness_ms: DEFAULT_FRESHNESS_MS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{reason:?}: {detail}")]
pub struct Rejection {
    pub op: Option<OpId>,
    pub reason: RejectReason,
    pub detail: String,
}

impl Rejection {
    fn new(op: Option<OpId>, reason: RejectReason, detail: impl Into<String>) -> Self {
        Self { op, reason, detail: detail.into() }
    }

    fn from_world(op: Option<OpId>, err: WorldError) -> Self {
        let reason = match err {
            WorldError::Occupied { .. } => RejectReason::Occupied,
            WorldError::OutOfBounds(_) => RejectReason::OutOfBounds,
            WorldError::NotFound(_) => RejectReason::NotFound,
            WorldError::NotPresent(_) => RejectReason::NotJoined,
            _ => RejectReason::Malformed,
        };
        Self::new(op, reason, err.to_string())
    }
}

/// Outcome of a mutating command.
#[derive(Debug, Clone, PartialEq)]
pub enum Sequenced {
    /// Newly applied; persist then broadcast.
    Fresh(LogRecord),
    /// Seen before; the original record, to be re-sent to the origin only.
    Duplicate(LogRecord),
}

impl Sequenced {
    pub fn record(&self) -> &LogRecord {
        match self {
            Sequenced::Fresh(r) | Sequenced::Duplicate(r) => r,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CatchUp {
    Events(Vec<LogRecord>),
    /// The requested span fell out of retention.
    Snapshot { seq: Seq, blocks: Vec<Block> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("requested seq {requested} is ahead of the world ({current})")]
pub struct FutureSeq {
    pub requested: Seq,
    pub current: Seq,
}

#[derive(Debug, Default, Clone)]
struct DedupWindow {
    order: VecDeque<OpId>,
    records: HashMap<OpId, LogRecord>,
}

impl DedupWindow {
    fn remember(&mut self, op: OpId, record: LogRecord, cap: usize) {
        if self.records.insert(op, record).is_none() {
            self.order.push_back(op);
        }
        while self.order.len() > cap {
            if let Some(old) = self.order.pop_front() {
                self.records.remove(&old);
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct WorldSequencer {
    state: WorldState,
    retained: VecDeque<LogRecord>,
    dedup: HashMap<UserId, DedupWindow>,
    config: SequencerConfig,
}

impl WorldSequencer {
    pub fn new(state: WorldState, config: SequencerConfig) -> Self {
        Self { state, retained: VecDeque::new(), dedup: HashMap::new(), config }
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    pub fn seq(&self) -> Seq {
        self.state.seq()
    }

    pub fn config(&self) -> &SequencerConfig {
        &self.config
    }

    /// Oldest retained seq, if any.
    pub fn horizon(&self) -> Option<Seq> {
        self.retained.front().map(|r| r.seq)
    }

    fn record(&mut self, origin: UserId, op: Option<OpId>, ev: WorldEvent, now: Millis) -> LogRecord {
        let rec = LogRecord { seq: self.state.seq(), at: now, origin, op, ev };
        self.remember(&rec);
        rec
    }

    /// Adds an already-applied record to the retention window and dedup table.
    pub fn remember(&mut self, rec: &LogRecord) {
        self.retained.push_back(rec.clone());
        while self.retained.len() > self.config.retention {
            self.retained.pop_front();
        }
        if let Some(op) = rec.op {
            self.dedup
                .entry(rec.origin)
                .or_default()
                .remember(op, rec.clone(), self.config.dedup_window);
        }
    }

    /// Applies a record read back from storage. Records at or below the
    /// current seq (already covered by a snapshot) only refresh retention
    /// and dedup.
    pub fn replay(&mut self, rec: &LogRecord) -> Result<(), WorldError> {
        let current = self.state.seq();
        if rec.seq > current {
            if rec.seq != current + 1 {
                return Err(WorldError::ReplayMismatch(format!(
                    "log jumps from seq {current} to {}",
                    rec.seq
                )));
            }
            let mut next = self.state.clone();
            next.apply_event(&rec.ev)?;
            self.state = next;
        }
        self.remember(rec);
        Ok(())
    }

    pub fn previous(&self, origin: UserId, op: OpId) -> Option<&LogRecord> {
        self.dedup.get(&origin)?.records.get(&op)
    }

    /// Validates and applies one mutating command (or marker observation).
    pub fn sequence_op(&mut self, cmd: &ClientMsg, origin: UserId, now: Millis) -> Result<Sequenced, Rejection> {
        let op = cmd.op_id();
        if let Some(op) = op {
            if let Some(prev) = self.previous(origin, op) {
                return Ok(Sequenced::Duplicate(prev.clone()));
            }
        }
        if !self.state.is_present(origin) {
            return Err(Rejection::new(op, RejectReason::NotJoined, "join the world first"));
        }
        if cmd.is_mutating() {
            let access = gate_access(&self.state, self.state.sighting(origin), now, self.config.freshness_ms);
            if let Access::Denied(why) = access {
                return Err(Rejection::new(op, RejectReason::Gated, format!("{why:?}")));
            }
        }
        let ev = match cmd {
            ClientMsg::AddBlock { pos, size, rgb, .. } => {
                let block = self
                    .state
                    .apply_add(*pos, *size, *rgb, origin, now)
                    .map_err(|e| Rejection::from_world(op, e))?;
                WorldEvent::Added { block }
            }
            ClientMsg::DeleteBlock { block, .. } => {
                let rec = self
                    .state
                    .apply_delete(*block, origin)
                    .map_err(|e| Rejection::from_world(op, e))?;
                WorldEvent::Deleted { block: rec.block, by: origin, by_other: rec.was_by_other }
            }
            ClientMsg::Undo { .. } => {
                let block = self
                    .state
                    .apply_undo(origin)
                    .ok_or_else(|| Rejection::new(op, RejectReason::NothingToUndo, "no live block to undo"))?;
                WorldEvent::Undone { user: origin, block }
            }
            ClientMsg::MarkerObserved { marker, pose, at } => {
                let observation = blocks_core::MarkerObservation {
                    marker_id: marker.clone(),
                    world_from_marker: *pose,
                    observed_at: *at,
                };
                self.state.apply_marker(origin, observation.clone());
                WorldEvent::MarkerObserved { user: origin, observation }
            }
            other => {
                return Err(Rejection::new(op, RejectReason::Malformed, format!("{other:?} is not sequenced")))
            }
        };
        Ok(Sequenced::Fresh(self.record(origin, op, ev, now)))
    }

    pub fn join(&mut self, user: UserId, now: Millis) -> Result<LogRecord, WorldError> {
        self.state.apply_join(user)?;
        Ok(self.record(user, None, WorldEvent::Joined { user }, now))
    }

    pub fn leave(&mut self, user: UserId, now: Millis) -> Result<LogRecord, WorldError> {
        self.state.apply_leave(user)?;
        Ok(self.record(user, None, WorldEvent::Left { user }, now))
    }

    /// Seeds the starter structure, one record per block.
    pub fn seed_starter(&mut self, now: Millis) -> Result<Vec<LogRecord>, WorldError> {
        let events = self.state.seed_starter_structure(now)?;
        let first = self.state.seq() + 1 - events.len() as Seq;
        let records: Vec<LogRecord> = events
            .into_iter()
            .enumerate()
            .map(|(i, ev)| LogRecord { seq: first + i as Seq, at: now, origin: UserId::SYSTEM, op: None, ev })
            .collect();
        for r in &records {
            self.remember(r);
        }
        Ok(records)
    }

    /// Events after `after_seq`, or a snapshot when they are no longer retained.
    pub fn catch_up(&self, after_seq: Seq) -> Result<CatchUp, FutureSeq> {
        let current = self.state.seq();
        if after_seq > current {
            return Err(FutureSeq { requested: after_seq, current });
        }
        if after_seq == current {
            return Ok(CatchUp::Events(Vec::new()));
        }
        match self.horizon() {
            Some(first) if first <= after_seq + 1 => {
                let skip = (after_seq + 1 - first) as usize;
                Ok(CatchUp::Events(self.retained.iter().skip(skip).cloned().collect()))
            }
            _ => Ok(CatchUp::Snapshot { seq: current, blocks: self.state.grid().blocks().copied().collect() }),
        }
    }
}
