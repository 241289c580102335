//! World model for a collaborative, persistent voxel world.
//!
//! - [`world`]: the per-world state machine (blocks, occupancy, undo, counters)
//! - [`placement`]: ray casting and block snapping
//! - [`anchor`]: marker-relative frames and location gating
//! - [`starter`]: committed fixtures (starter structure, palette)

pub mod anchor;
pub mod grid;
#[cfg(any(test, feature = "oracles"))]
pub mod oracles;
pub mod placement;
pub mod starter;
pub mod types;
pub mod world;

pub use anchor::{Access, DenyReason, MarkerObservation, Pose};
pub use grid::BlockGrid;
pub use placement::{Cursor, Face, Hit, HitKind, Ray};
pub use types::{
    Block, BlockId, CellPos, Color, LocationMode, Millis, Seq, SizeClass, UserId, WorldId,
    WorldKind, FINE_UNIT_M,
};
pub use world::{Counters, DeletionRecord, InfoCounts, WorldError, WorldEvent, WorldState};
