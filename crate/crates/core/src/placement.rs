//! Creation geometry: ray casting, snapping, press-and-hold lines and colors.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::BlockGrid;
use crate::starter::palette;
use crate::types::{Block, CellPos, Color, SizeClass, UserId, FINE_UNIT_M};

/// Block hits win over ground hits that are no more than this much closer.
pub const TIE_EPS_M: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum PlacementError {
    #[error("ray direction must be unit length (|d| = {0})")]
    NonUnitDirection(f64),
    #[error("ray has non-finite components")]
    NonFinite,
    #[error("line extension needs at least one block, got {0}")]
    InvalidCount(i64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RayRepr")]
pub struct Ray {
    #[serde(rename = "o")]
    origin: Vector3<f64>,
    #[serde(rename = "d")]
    direction: Vector3<f64>,
}

#[derive(Deserialize)]
struct RayRepr {
    o: Vector3<f64>,
    d: Vector3<f64>,
}

impl TryFrom<RayRepr> for Ray {
    type Error = PlacementError;

    fn try_from(r: RayRepr) -> Result<Self, Self::Error> {
        Ray::new(r.o, r.d)
    }
}

impl Ray {
    /// `direction` must already be unit length (within 1e-9).
    pub fn new(origin: Vector3<f64>, direction: Vector3<f64>) -> Result<Self, PlacementError> {
        if !origin.iter().chain(direction.iter()).all(|v| v.is_finite()) {
            return Err(PlacementError::NonFinite);
        }
        let n = direction.norm();
        if (n - 1.0).abs() > 1e-9 {
            return Err(PlacementError::NonUnitDirection(n));
        }
        Ok(Self { origin, direction })
    }

    /// Normalizes `direction` first.
    pub fn towards(origin: Vector3<f64>, direction: Vector3<f64>) -> Result<Self, PlacementError> {
        let n = direction.norm();
        if !(n.is_finite() && n > 0.0) {
            return Err(PlacementError::NonUnitDirection(n));
        }
        Self::new(origin, direction / n)
    }

    pub fn origin(&self) -> &Vector3<f64> {
        &self.origin
    }

    pub fn direction(&self) -> &Vector3<f64> {
        &self.direction
    }

    pub fn at(&self, t: f64) -> Vector3<f64> {
        self.origin + self.direction * t
    }

    pub fn is_valid(&self) -> bool {
        Self::new(self.origin, self.direction).is_ok()
    }
}

/// Axis-aligned unit face normal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Face {
    #[serde(rename = "+x")]
    PosX,
    #[serde(rename = "-x")]
    NegX,
    #[serde(rename = "+y")]
    PosY,
    #[serde(rename = "-y")]
    NegY,
    #[serde(rename = "+z")]
    PosZ,
    #[serde(rename = "-z")]
    NegZ,
}

impl Face {
    pub fn from_axis(axis: usize, positive: bool) -> Face {
        match (axis, positive) {
            (0, true) => Face::PosX,
            (0, false) => Face::NegX,
            (1, true) => Face::PosY,
            (1, false) => Face::NegY,
            (2, true) => Face::PosZ,
            (2, false) => Face::NegZ,
            _ => panic!("axis out of range: {axis}"),
        }
    }

    pub fn axis(self) -> usize {
        match self {
            Face::PosX | Face::NegX => 0,
            Face::PosY | Face::NegY => 1,
            Face::PosZ | Face::NegZ => 2,
        }
    }

    pub fn sign(self) -> i64 {
        match self {
            Face::PosX | Face::PosY | Face::PosZ => 1,
            _ => -1,
        }
    }

    pub fn is_horizontal(self) -> bool {
        self.axis() == 1
    }

    pub fn step(self) -> CellPos {
        let mut c = CellPos::default();
        c.set(self.axis(), self.sign());
        c
    }

    pub fn normal(self) -> Vector3<f64> {
        let mut v = Vector3::zeros();
        v[self.axis()] = self.sign() as f64;
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HitKind {
    Ground,
    BlockFace { block: Block, face: Face },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub kind: HitKind,
    /// Intersection point in meters, world frame.
    pub point: Vector3<f64>,
    /// Distance along the ray in meters.
    pub distance: f64,
}

impl Hit {
    pub fn block(&self) -> Option<&Block> {
        match &self.kind {
            HitKind::BlockFace { block, .. } => Some(block),
            HitKind::Ground => None,
        }
    }
}

/// A collaborator's aim, shown to everyone else.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cursor {
    pub user: UserId,
    pub ray: Ray,
    pub size: SizeClass,
    #[serde(rename = "rgb")]
    pub color: Color,
    pub preview: Option<CellPos>,
}

impl Cursor {
    /// Builds a cursor whose preview is where a tap would place a block.
    pub fn aim(grid: &BlockGrid, user: UserId, ray: Ray, size: SizeClass, color: Color) -> Self {
        let preview = raycast(grid, &ray).map(|h| place_from_hit(&h, size));
        Cursor { user, ray, size, color, preview }
    }
}

/// Nearest hit against the ground plane `y = 0` and every live block.
///
/// Blocks are found by walking the fine lattice cell by cell from where the
/// ray enters the grid's bounding box. A block that already contains the
/// origin is looked through.
pub fn raycast(grid: &BlockGrid, ray: &Ray) -> Option<Hit> {
    let block = traverse(grid, ray);
    let ground = ground_hit(ray);
    match (block, ground) {
        (Some(b), Some(g)) => Some(if b.distance <= g.distance + TIE_EPS_M { b } else { g }),
        (b, g) => b.or(g),
    }
}

fn ground_hit(ray: &Ray) -> Option<Hit> {
    let (o, d) = (ray.origin(), ray.direction());
    if !(d.y < 0.0 && o.y > 0.0) {
        return None;
    }
    let t = -o.y / d.y;
    let mut point = ray.at(t);
    point.y = 0.0;
    Some(Hit { kind: HitKind::Ground, point, distance: t })
}

/// Lattice cell containing `v`, resolving exact boundaries toward the direction of travel.
fn cell_coord(v: f64, dir: f64) -> i64 {
    let f = v.floor();
    if f == v && dir < 0.0 {
        f as i64 - 1
    } else {
        f as i64
    }
}

fn traverse(grid: &BlockGrid, ray: &Ray) -> Option<Hit> {
    let (lo, hi) = grid.cell_bounds()?;
    // work in fine units; distances scale back by FINE_UNIT_M
    let o = ray.origin() / FINE_UNIT_M;
    let d = *ray.direction();

    let mut t_enter = f64::NEG_INFINITY;
    let mut t_exit = f64::INFINITY;
    let mut enter_axis = None;
    for a in 0..3 {
        let (l, h) = (lo.get(a) as f64, hi.get(a) as f64);
        if d[a] == 0.0 {
            if o[a] < l || o[a] > h {
                return None;
            }
            continue;
        }
        let (t0, t1) = {
            let ta = (l - o[a]) / d[a];
            let tb = (h - o[a]) / d[a];
            if ta < tb { (ta, tb) } else { (tb, ta) }
        };
        if t0 > t_enter {
            t_enter = t0;
            enter_axis = Some(a);
        }
        t_exit = t_exit.min(t1);
    }
    if t_exit < t_enter.max(0.0) {
        return None;
    }

    let mut cell = CellPos::default();
    let mut t = t_enter.max(0.0);
    let mut face = None;
    if t_enter > 0.0 {
        let a = enter_axis.expect("finite entry has an axis");
        let p = o + d * t_enter;
        for b in 0..3 {
            let c = if b == a {
                if d[a] > 0.0 { lo.get(a) } else { hi.get(a) - 1 }
            } else {
                cell_coord(p[b], d[b]).clamp(lo.get(b), hi.get(b) - 1)
            };
            cell.set(b, c);
        }
        face = Some(Face::from_axis(a, d[a] < 0.0));
    } else {
        for b in 0..3 {
            cell.set(b, cell_coord(o[b], d[b]));
        }
    }

    let step: [i64; 3] = std::array::from_fn(|a| if d[a] > 0.0 { 1 } else if d[a] < 0.0 { -1 } else { 0 });
    let mut skip = None;

    loop {
        let inside = (0..3).all(|a| cell.get(a) >= lo.get(a) && cell.get(a) < hi.get(a));
        if !inside {
            return None;
        }
        if let Some(block) = grid.block_at(cell) {
            if Some(block.id) != skip {
                let (t_hit, f) = match face {
                    Some(f) => (t, f),
                    None => match origin_entry(block, &o, &d) {
                        Some(entry) => entry,
                        None => {
                            skip = Some(block.id);
                            (f64::NAN, Face::PosX)
                        }
                    },
                };
                if !t_hit.is_nan() {
                    return Some(Hit {
                        kind: HitKind::BlockFace { block: *block, face: f },
                        point: ray.at(t_hit * FINE_UNIT_M),
                        distance: t_hit * FINE_UNIT_M,
                    });
                }
            }
        }
        // next boundary on each axis, computed from the cell index to avoid drift
        let mut best = None::<(f64, usize)>;
        for a in 0..3 {
            if step[a] == 0 {
                continue;
            }
            let boundary = (cell.get(a) + i64::from(step[a] > 0)) as f64;
            let ta = (boundary - o[a]) / d[a];
            if best.is_none_or(|(tb, _)| ta < tb) {
                best = Some((ta, a));
            }
        }
        let (t_next, a) = best?;
        if t_next > t_exit {
            return None;
        }
        t = t_next;
        cell.set(a, cell.get(a) + step[a]);
        face = Some(Face::from_axis(a, step[a] < 0));
    }
}

/// For the cell holding the ray origin: the block is hit at `t = 0` only when
/// the origin lies on a face the ray is entering through.
fn origin_entry(block: &Block, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(f64, Face)> {
    let (lo, hi) = (block.pos, block.max_corner());
    let mut best: Option<(f64, usize)> = None;
    for a in 0..3 {
        if d[a] == 0.0 {
            continue;
        }
        let near = if d[a] > 0.0 { lo.get(a) } else { hi.get(a) } as f64;
        let ta = (near - o[a]) / d[a];
        if best.is_none_or(|(tb, _)| ta > tb) {
            best = Some((ta, a));
        }
    }
    let (t_near, a) = best?;
    (t_near >= 0.0).then(|| (t_near, Face::from_axis(a, d[a] < 0.0)))
}

fn snap(v_m: f64, edge: i64) -> i64 {
    (v_m / (edge as f64 * FINE_UNIT_M)).floor() as i64 * edge
}

/// Where a tap with the given hit would put a new block of `size`.
///
/// On the ground the block's footprint is the `edge`-aligned lattice square
/// under the hit point. On a block face the new block sits flush against
/// that face and its two lateral coordinates snap the same way.
pub fn place_from_hit(hit: &Hit, size: SizeClass) -> CellPos {
    let e = size.edge();
    match &hit.kind {
        HitKind::Ground => CellPos::new(snap(hit.point.x, e), 0, snap(hit.point.z, e)),
        HitKind::BlockFace { block, face } => {
            let axis = face.axis();
            let mut pos = CellPos::default();
            for a in 0..3 {
                if a != axis {
                    pos.set(a, snap(hit.point[a], e));
                }
            }
            let along = if face.sign() > 0 {
                block.pos.get(axis) + block.edge()
            } else {
                block.pos.get(axis) - e
            };
            pos.set(axis, along);
            pos
        }
    }
}

/// Positions for a press-and-hold run starting at `anchor` and growing
/// along `face`: a column off horizontal surfaces, a row off vertical ones.
pub fn line_extension(anchor: CellPos, face: Face, size: SizeClass, count: i64) -> Result<Vec<CellPos>, PlacementError> {
    if count < 1 {
        return Err(PlacementError::InvalidCount(count));
    }
    let e = size.edge();
    let s = face.step();
    Ok((0..count)
        .map(|i| anchor.offset(s.x * e * i, s.y * e * i, s.z * e * i))
        .collect())
}

/// Color of the block under the ray, if any.
pub fn pick_color(grid: &BlockGrid, ray: &Ray) -> Option<Color> {
    raycast(grid, ray).and_then(|h| h.block().map(|b| b.color))
}

/// Deterministic palette draw for a seed.
pub fn random_default_color(seed: u64) -> Color {
    let p = palette();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    p[rng.random_range(0..p.len())]
}
