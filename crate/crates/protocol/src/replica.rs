//! Client-side mirror of a world, rebuilt from a snapshot plus the event stream.

use std::collections::BTreeSet;

use blocks_core::world::InfoCounts;
use blocks_core::{Block, BlockGrid, Seq, UserId, WorldEvent, WorldId};

use crate::msg::LogRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Applied {
    Applied,
    /// Already reflected in the replica (seq at or below ours).
    Stale,
    /// Events were missed; the caller should catch up from `expected - 1`.
    Gap { expected: Seq, got: Seq },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Replica {
    pub world: WorldId,
    seq: Seq,
    grid: BlockGrid,
    online: BTreeSet<UserId>,
    blocks_added: u64,
}

impl Replica {
    pub fn new(world: WorldId) -> Self {
        Self { world, seq: 0, grid: BlockGrid::new(), online: BTreeSet::new(), blocks_added: 0 }
    }

    pub fn seq(&self) -> Seq {
        self.seq
    }

    pub fn grid(&self) -> &BlockGrid {
        &self.grid
    }

    pub fn online(&self) -> &BTreeSet<UserId> {
        &self.online
    }

    pub fn blocks_added(&self) -> u64 {
        self.blocks_added
    }

    /// Replaces the block map wholesale. Presence is not part of a snapshot;
    /// the server follows up with a Presence message.
    pub fn reset(&mut self, seq: Seq, blocks: &[Block], info: InfoCounts) {
        self.seq = seq;
        self.grid.clear();
        for b in blocks {
            // a well-formed snapshot never overlaps
            let _ = self.grid.insert(*b);
        }
        self.blocks_added = info.blocks_added;
    }

    pub fn set_online(&mut self, users: impl IntoIterator<Item = UserId>) {
        self.online = users.into_iter().collect();
    }

    pub fn apply(&mut self, rec: &LogRecord) -> Applied {
        if rec.seq <= self.seq {
            return Applied::Stale;
        }
        if rec.seq != self.seq + 1 {
            return Applied::Gap { expected: self.seq + 1, got: rec.seq };
        }
        match &rec.ev {
            WorldEvent::Added { block } => {
                let _ = self.grid.insert(*block);
                self.blocks_added += 1;
            }
            WorldEvent::Deleted { block, .. } | WorldEvent::Undone { block, .. } => {
                self.grid.remove(block.id);
            }
            WorldEvent::Joined { user } => {
                self.online.insert(*user);
            }
            WorldEvent::Left { user } => {
                self.online.remove(user);
            }
            WorldEvent::MarkerObserved { .. } => {}
        }
        self.seq = rec.seq;
        Applied::Applied
    }
}
