//! Brute-force reference implementations used by tests.
//!
//! Nothing here is used by the library itself; these exist so property tests
//! can check the optimized code paths against something obviously correct.

use std::collections::HashMap;

use nalgebra::{Matrix4, Vector3};

use crate::anchor::Pose;
use crate::grid::BlockGrid;
use crate::placement::{Face, Ray};
use crate::types::{Block, BlockId, CellPos, FINE_UNIT_M};

/// What a brute-force ray test hit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OracleHit {
    Ground { distance: f64 },
    Block { id: BlockId, face: Face, distance: f64 },
}

impl OracleHit {
    pub fn distance(&self) -> f64 {
        match self {
            OracleHit::Ground { distance } | OracleHit::Block { distance, .. } => *distance,
        }
    }
}

/// Slab test of one block box; `None` when missed or when the origin is inside.
pub fn slab_hit(block: &Block, ray: &Ray) -> Option<(f64, Face)> {
    let lo = block.pos;
    let hi = block.max_corner();
    let o = ray.origin();
    let d = ray.direction();
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    let mut axis = 0;
    for a in 0..3 {
        let l = lo.get(a) as f64 * FINE_UNIT_M;
        let h = hi.get(a) as f64 * FINE_UNIT_M;
        if d[a] == 0.0 {
            if o[a] < l || o[a] > h {
                return None;
            }
            continue;
        }
        let mut t0 = (l - o[a]) / d[a];
        let mut t1 = (h - o[a]) / d[a];
        if t0 > t1 {
            std::mem::swap(&mut t0, &mut t1);
        }
        if t0 > t_near {
            t_near = t0;
            axis = a;
        }
        t_far = t_far.min(t1);
    }
    if t_near < 0.0 || t_near > t_far {
        return None;
    }
    Some((t_near, Face::from_axis(axis, d[axis] < 0.0)))
}

/// Nearest hit over every block box and the ground plane, blocks winning ties within 1e-9 m.
pub fn brute_force_raycast(grid: &BlockGrid, ray: &Ray) -> Option<OracleHit> {
    let mut best: Option<OracleHit> = None;
    for b in grid.blocks() {
        if let Some((t, face)) = slab_hit(b, ray) {
            if best.is_none_or(|h| t < h.distance()) {
                best = Some(OracleHit::Block { id: b.id, face, distance: t });
            }
        }
    }
    let (o, d) = (ray.origin(), ray.direction());
    if d.y < 0.0 && o.y > 0.0 {
        let t = -o.y / d.y;
        if best.is_none_or(|h| t + 1e-9 < h.distance()) {
            best = Some(OracleHit::Ground { distance: t });
        }
    }
    best
}

/// Union of all live blocks' cells, with a count of how many blocks claim each cell.
pub fn cell_claims(grid: &BlockGrid) -> HashMap<CellPos, Vec<BlockId>> {
    let mut claims: HashMap<CellPos, Vec<BlockId>> = HashMap::new();
    for b in grid.blocks() {
        for c in b.cells() {
            claims.entry(c).or_default().push(b.id);
        }
    }
    claims
}

/// True when the occupancy index maps exactly the brute-force cell union.
pub fn occupancy_matches(grid: &BlockGrid) -> bool {
    let claims = cell_claims(grid);
    claims.len() == grid.occupied_len()
        && claims
            .iter()
            .all(|(c, ids)| ids.len() == 1 && grid.occupant(*c) == Some(ids[0]))
}

/// Pairs of live blocks whose boxes intersect, by interval overlap on every axis.
pub fn overlapping_pairs(grid: &BlockGrid) -> Vec<(BlockId, BlockId)> {
    let blocks: Vec<&Block> = grid.blocks().collect();
    let mut out = Vec::new();
    for (i, a) in blocks.iter().enumerate() {
        for b in &blocks[i + 1..] {
            let (amax, bmax) = (a.max_corner(), b.max_corner());
            if (0..3).all(|k| a.pos.get(k) < bmax.get(k) && b.pos.get(k) < amax.get(k)) {
                out.push((a.id, b.id));
            }
        }
    }
    out
}

/// 4×4 homogeneous matrix of a pose.
pub fn homogeneous(p: &Pose) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    for i in 0..3 {
        for j in 0..3 {
            m[(i, j)] = p.scale() * p.rotation()[(i, j)];
        }
        m[(i, 3)] = p.translation()[i];
    }
    m
}

/// World → marker via a general 4×4 inverse.
pub fn to_marker_by_matrix(p: &Pose, world: &Vector3<f64>) -> Vector3<f64> {
    let inv = homogeneous(p).try_inverse().expect("similarity transforms are invertible");
    (inv * world.push(1.0)).xyz()
}
