//! Live blocks plus the fine-cell occupancy index.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::types::{cells_of, Block, BlockId, CellPos, SizeClass};

/// Blocks keyed by id, with a cell → block index kept in lockstep.
///
/// Used both as the authoritative store inside [`WorldState`](crate::WorldState)
/// and as a client-side replica.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Block>", into = "Vec<Block>")]
pub struct BlockGrid {
    blocks: BTreeMap<BlockId, Block>,
    occupancy: HashMap<CellPos, BlockId>,
}

impl BlockGrid {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn get(&self, id: BlockId) -> Option<&Block> {
        self.blocks.get(&id)
    }

    pub fn contains(&self, id: BlockId) -> bool {
        self.blocks.contains_key(&id)
    }

    pub fn blocks(&self) -> impl Iterator<Item = &Block> {
        self.blocks.values()
    }

    pub fn block_map(&self) -> &BTreeMap<BlockId, Block> {
        &self.blocks
    }

    pub fn occupant(&self, cell: CellPos) -> Option<BlockId> {
        self.occupancy.get(&cell).copied()
    }

    pub fn block_at(&self, cell: CellPos) -> Option<&Block> {
        self.occupant(cell).and_then(|id| self.blocks.get(&id))
    }

    pub fn occupied_cells(&self) -> impl Iterator<Item = (CellPos, BlockId)> + '_ {
        self.occupancy.iter().map(|(c, id)| (*c, *id))
    }

    pub fn occupied_len(&self) -> usize {
        self.occupancy.len()
    }

    /// First occupied cell inside the footprint of a prospective block.
    pub fn first_conflict(&self, pos: CellPos, size: SizeClass) -> Option<(CellPos, BlockId)> {
        cells_of(pos, size).find_map(|c| self.occupant(c).map(|id| (c, id)))
    }

    /// Inserts a block whose cells are known to be free. Returns the occupant
    /// on conflict and leaves the grid untouched.
    pub fn insert(&mut self, block: Block) -> Result<(), (CellPos, BlockId)> {
        if let Some(conflict) = self.first_conflict(block.pos, block.size) {
            return Err(conflict);
        }
        for c in block.cells() {
            self.occupancy.insert(c, block.id);
        }
        self.blocks.insert(block.id, block);
        Ok(())
    }

    pub fn remove(&mut self, id: BlockId) -> Option<Block> {
        let block = self.blocks.remove(&id)?;
        for c in block.cells() {
            self.occupancy.remove(&c);
        }
        Some(block)
    }

    pub fn clear(&mut self) {
        self.blocks.clear();
        self.occupancy.clear();
    }

    /// Inclusive-min / exclusive-max cell bounds of everything in the grid.
    pub fn cell_bounds(&self) -> Option<(CellPos, CellPos)> {
        let mut it = self.blocks.values();
        let first = it.next()?;
        let mut lo = first.pos;
        let mut hi = first.max_corner();
        for b in it {
            let bhi = b.max_corner();
            for a in 0..3 {
                lo.set(a, lo.get(a).min(b.pos.get(a)));
                hi.set(a, hi.get(a).max(bhi.get(a)));
            }
        }
        Some((lo, hi))
    }
}

impl TryFrom<Vec<Block>> for BlockGrid {
    type Error = String;

    fn try_from(blocks: Vec<Block>) -> Result<Self, Self::Error> {
        let mut grid = BlockGrid::new();
        for b in blocks {
            if grid.contains(b.id) {
                return Err(format!("duplicate block id {}", b.id));
            }
            grid.insert(b)
                .map_err(|(cell, other)| format!("block {} overlaps {} at {}", b.id, other, cell))?;
        }
        Ok(grid)
    }
}

impl From<BlockGrid> for Vec<Block> {
    fn from(g: BlockGrid) -> Self {
        g.blocks.into_values().collect()
    }
}
