//! The single-world state machine.
//!
//! Every successful mutation advances the world's sequence number by exactly
//! one and yields a [`WorldEvent`] describing what happened. Feeding those
//! events back through [`WorldState::apply_event`] on a fresh world
//! reproduces the state exactly.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anchor::MarkerObservation;
use crate::grid::BlockGrid;
use crate::types::{
    Block, BlockId, CellPos, Color, LocationMode, Millis, Seq, SizeClass, UserId, WorldId,
    WorldKind, COORD_LIMIT,
};

/// How long a freshly placed block is drawn lightened.
pub const HIGHLIGHT_MS: Millis = 1_500;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WorldError {
    #[error("cell {cell} is already covered by block {by}")]
    Occupied { cell: CellPos, by: BlockId },
    #[error("position {0} is outside the world")]
    OutOfBounds(CellPos),
    #[error("no live block with id {0}")]
    NotFound(BlockId),
    #[error("world already has blocks")]
    NotEmpty,
    #[error("starter structures only go into shared worlds")]
    NotShared,
    #[error("user {0} is already present")]
    AlreadyPresent(UserId),
    #[error("user {0} is not present")]
    NotPresent(UserId),
    #[error("replayed event does not reproduce the recorded outcome: {0}")]
    ReplayMismatch(String),
}

/// Result of a delete.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeletionRecord {
    pub block: Block,
    pub was_by_other: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counters {
    pub total_adds: u64,
    pub total_deletes: u64,
    pub deletes_by_others: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InfoCounts {
    pub blocks_added: u64,
    pub users_online: u64,
}

/// A sequenced state transition, as persisted and broadcast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "k")]
pub enum WorldEvent {
    Added {
        block: Block,
    },
    Deleted {
        block: Block,
        by: UserId,
        by_other: bool,
    },
    Undone {
        user: UserId,
        block: Block,
    },
    Joined {
        user: UserId,
    },
    Left {
        user: UserId,
    },
    MarkerObserved {
        user: UserId,
        observation: MarkerObservation,
    },
}

impl WorldEvent {
    /// The user whose action produced the event.
    pub fn actor(&self) -> UserId {
        match self {
            WorldEvent::Added { block } => block.owner,
            WorldEvent::Deleted { by, .. } => *by,
            WorldEvent::Undone { user, .. }
            | WorldEvent::Joined { user }
            | WorldEvent::Left { user }
            | WorldEvent::MarkerObserved { user, .. } => *user,
        }
    }
}

/// Authoritative content of one world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    id: WorldId,
    kind: WorldKind,
    location: LocationMode,
    seq: Seq,
    next_block_id: u64,
    grid: BlockGrid,
    undo_stacks: BTreeMap<UserId, Vec<BlockId>>,
    presence: BTreeSet<UserId>,
    /// Latest observation per marker, from anyone.
    markers: BTreeMap<String, MarkerObservation>,
    /// Latest observation per user, used for location gating.
    sightings: BTreeMap<UserId, MarkerObservation>,
    counters: Counters,
}

impl WorldState {
    pub fn new(id: WorldId, kind: WorldKind, location: LocationMode) -> Self {
        Self {
            id,
            kind,
            location,
            seq: 0,
            next_block_id: 1,
            grid: BlockGrid::new(),
            undo_stacks: BTreeMap::new(),
            presence: BTreeSet::new(),
            markers: BTreeMap::new(),
            sightings: BTreeMap::new(),
            counters: Counters::default(),
        }
    }

    pub fn shared(id: impl Into<String>) -> Self {
        Self::new(WorldId::new(id), WorldKind::Shared, LocationMode::Independent)
    }

    pub fn personal(owner: UserId) -> Self {
        Self::new(WorldId::personal(owner), WorldKind::Personal, LocationMode::Independent)
    }

    pub fn id(&self) -> &WorldId {
        &self.id
    }

    pub fn kind(&self) -> WorldKind {
        self.kind
    }

    pub fn location(&self) -> &LocationMode {
        &self.location
    }

    /// Sequence number of the last applied event (0 for a fresh world).
    pub fn seq(&self) -> Seq {
        self.seq
    }

    pub fn grid(&self) -> &BlockGrid {
        &self.grid
    }

    pub fn block(&self, id: BlockId) -> Option<&Block> {
        self.grid.get(id)
    }

    pub fn counters(&self) -> Counters {
        self.counters
    }

    pub fn presence(&self) -> &BTreeSet<UserId> {
        &self.presence
    }

    pub fn is_present(&self, user: UserId) -> bool {
        self.presence.contains(&user)
    }

    pub fn undo_stack(&self, user: UserId) -> &[BlockId] {
        self.undo_stacks.get(&user).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn marker(&self, marker_id: &str) -> Option<&MarkerObservation> {
        self.markers.get(marker_id)
    }

    pub fn sighting(&self, user: UserId) -> Option<&MarkerObservation> {
        self.sightings.get(&user)
    }

    fn advance(&mut self) -> Seq {
        self.seq += 1;
        self.seq
    }

    pub fn apply_add(
        &mut self,
        pos: CellPos,
        size: SizeClass,
        color: Color,
        owner: UserId,
        time: Millis,
    ) -> Result<Block, WorldError> {
        let e = size.edge();
        let in_range = |v: i64| (-COORD_LIMIT..=COORD_LIMIT - e).contains(&v);
        if pos.y < 0 || !in_range(pos.x) || !in_range(pos.y) || !in_range(pos.z) {
            return Err(WorldError::OutOfBounds(pos));
        }
        if let Some((cell, by)) = self.grid.first_conflict(pos, size) {
            return Err(WorldError::Occupied { cell, by });
        }
        let block = Block {
            id: BlockId(self.next_block_id),
            pos,
            size,
            color,
            owner,
            seq: self.seq + 1,
            created_at: time,
        };
        self.grid
            .insert(block)
            .expect("footprint was checked free");
        self.next_block_id += 1;
        self.undo_stacks.entry(owner).or_default().push(block.id);
        self.counters.total_adds += 1;
        self.advance();
        Ok(block)
    }

    pub fn apply_delete(&mut self, block_id: BlockId, deleter: UserId) -> Result<DeletionRecord, WorldError> {
        let block = self.grid.remove(block_id).ok_or(WorldError::NotFound(block_id))?;
        let was_by_other = deleter != block.owner;
        self.counters.total_deletes += 1;
        if was_by_other {
            self.counters.deletes_by_others += 1;
        }
        self.advance();
        Ok(DeletionRecord { block, was_by_other })
    }

    /// Removes the most recent still-live block `user` added.
    ///
    /// Entries above it whose blocks were already deleted are discarded. When
    /// no live entry remains the world is left untouched and `None` returned.
    pub fn apply_undo(&mut self, user: UserId) -> Option<Block> {
        let stack = self.undo_stacks.get_mut(&user)?;
        let idx = stack.iter().rposition(|id| self.grid.contains(*id))?;
        let id = stack[idx];
        stack.truncate(idx);
        let block = self.grid.remove(id).expect("entry was checked live");
        self.counters.total_deletes += 1;
        self.advance();
        Some(block)
    }

    pub fn apply_join(&mut self, user: UserId) -> Result<(), WorldError> {
        if !self.presence.insert(user) {
            return Err(WorldError::AlreadyPresent(user));
        }
        self.advance();
        Ok(())
    }

    pub fn apply_leave(&mut self, user: UserId) -> Result<(), WorldError> {
        if !self.presence.remove(&user) {
            return Err(WorldError::NotPresent(user));
        }
        self.advance();
        Ok(())
    }

    pub fn apply_marker(&mut self, user: UserId, observation: MarkerObservation) {
        self.markers
            .insert(observation.marker_id.clone(), observation.clone());
        self.sightings.insert(user, observation);
        self.advance();
    }

    /// Re-applies a recorded event, checking that it reproduces the recorded outcome.
    pub fn apply_event(&mut self, event: &WorldEvent) -> Result<(), WorldError> {
        match event {
            WorldEvent::Added { block } => {
                let got = self.apply_add(block.pos, block.size, block.color, block.owner, block.created_at)?;
                if got != *block {
                    return Err(WorldError::ReplayMismatch(format!(
                        "add produced {got:?}, log has {block:?}"
                    )));
                }
            }
            WorldEvent::Deleted { block, by, by_other } => {
                let rec = self.apply_delete(block.id, *by)?;
                if rec.block != *block || rec.was_by_other != *by_other {
                    return Err(WorldError::ReplayMismatch(format!("delete of {}", block.id)));
                }
            }
            WorldEvent::Undone { user, block } => match self.apply_undo(*user) {
                Some(b) if b == *block => {}
                other => {
                    return Err(WorldError::ReplayMismatch(format!(
                        "undo by {user} removed {:?}, log has {}",
                        other.map(|b| b.id),
                        block.id
                    )))
                }
            },
            WorldEvent::Joined { user } => self.apply_join(*user)?,
            WorldEvent::Left { user } => self.apply_leave(*user)?,
            WorldEvent::MarkerObserved { user, observation } => {
                self.apply_marker(*user, observation.clone())
            }
        }
        Ok(())
    }

    /// Cumulative adds and current presence, as shown in the info panel.
    pub fn info_counts(&self) -> InfoCounts {
        InfoCounts {
            blocks_added: self.counters.total_adds,
            users_online: self.presence.len() as u64,
        }
    }

    /// Inserts the starter template into an empty shared world.
    pub fn seed_starter_structure(&mut self, now: Millis) -> Result<Vec<WorldEvent>, WorldError> {
        if self.kind != WorldKind::Shared {
            return Err(WorldError::NotShared);
        }
        if !self.grid.is_empty() {
            return Err(WorldError::NotEmpty);
        }
        let mut events = Vec::new();
        for t in crate::starter::starter_template() {
            let block = self.apply_add(t.pos, t.size, t.color, UserId::SYSTEM, now)?;
            events.push(WorldEvent::Added { block });
        }
        Ok(events)
    }
}

impl AsRef<BlockGrid> for WorldState {
    fn as_ref(&self) -> &BlockGrid {
        &self.grid
    }
}

/// Whether a block is still inside its post-placement highlight.
pub fn recent_highlight(block: &Block, now: Millis) -> bool {
    now.saturating_sub(block.created_at) < HIGHLIGHT_MS
}
