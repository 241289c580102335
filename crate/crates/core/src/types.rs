//! Value types shared by every layer: lattice positions, sizes, colors and ids.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Edge length of the finest lattice cell, in meters.
pub const FINE_UNIT_M: f64 = 0.02;

/// Milliseconds since the Unix epoch (or since simulation start).
pub type Millis = u64;

/// Per-world event sequence number. The first sequenced event is 1.
pub type Seq = u64;

/// Largest absolute coordinate (in fine units) a block may occupy.
pub const COORD_LIMIT: i64 = 1 << 30;

/// One of the three block edge lengths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SizeClass {
    #[serde(rename = "S")]
    Small,
    #[serde(rename = "M")]
    Medium,
    #[serde(rename = "L")]
    Large,
}

impl SizeClass {
    pub const ALL: [SizeClass; 3] = [SizeClass::Small, SizeClass::Medium, SizeClass::Large];

    /// Edge length in fine units.
    pub const fn edge(self) -> i64 {
        match self {
            SizeClass::Small => 1,
            SizeClass::Medium => 2,
            SizeClass::Large => 4,
        }
    }

    pub fn edge_m(self) -> f64 {
        self.edge() as f64 * FINE_UNIT_M
    }

    pub const fn code(self) -> &'static str {
        match self {
            SizeClass::Small => "S",
            SizeClass::Medium => "M",
            SizeClass::Large => "L",
        }
    }
}

impl FromStr for SizeClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "S" | "s" | "1" => Ok(SizeClass::Small),
            "M" | "m" | "2" => Ok(SizeClass::Medium),
            "L" | "l" | "4" => Ok(SizeClass::Large),
            other => Err(format!("unknown size class {other:?} (expected S, M or L)")),
        }
    }
}

/// Minimum corner of a block, in fine units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct CellPos {
    pub x: i64,
    pub y: i64,
    pub z: i64,
}

impl CellPos {
    pub const fn new(x: i64, y: i64, z: i64) -> Self {
        Self { x, y, z }
    }

    pub fn get(self, axis: usize) -> i64 {
        match axis {
            0 => self.x,
            1 => self.y,
            2 => self.z,
            _ => panic!("axis out of range: {axis}"),
        }
    }

    pub fn set(&mut self, axis: usize, value: i64) {
        match axis {
            0 => self.x = value,
            1 => self.y = value,
            2 => self.z = value,
            _ => panic!("axis out of range: {axis}"),
        }
    }

    pub fn offset(self, dx: i64, dy: i64, dz: i64) -> Self {
        Self::new(self.x + dx, self.y + dy, self.z + dz)
    }

    pub fn to_array(self) -> [i64; 3] {
        [self.x, self.y, self.z]
    }
}

impl From<[i64; 3]> for CellPos {
    fn from(a: [i64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }
}

impl fmt::Display for CellPos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.x, self.y, self.z)
    }
}

impl Serialize for CellPos {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_array().serialize(s)
    }
}

impl<'de> Deserialize<'de> for CellPos {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        <[i64; 3]>::deserialize(d).map(CellPos::from)
    }
}

/// 24-bit RGB color.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Color {
    pub r: u8,
    pub g: u8,
    pub b: u8,
}

impl Color {
    pub const fn new(r: u8, g: u8, b: u8) -> Self {
        Self { r, g, b }
    }
}

impl fmt::Display for Color {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{:02x}{:02x}{:02x}", self.r, self.g, self.b)
    }
}

impl Serialize for Color {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        [self.r, self.g, self.b].serialize(s)
    }
}

impl<'de> Deserialize<'de> for Color {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let [r, g, b] = <[u8; 3]>::deserialize(d)?;
        Ok(Color { r, g, b })
    }
}

/// Anonymous 128-bit user identifier. The all-zero id is reserved for the
/// server itself (starter structures).
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct UserId(pub u128);

impl UserId {
    pub const SYSTEM: UserId = UserId(0);

    /// Draws a fresh non-system id.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        loop {
            let v: u128 = rng.random();
            if v != 0 {
                return UserId(v);
            }
        }
    }

    pub fn is_system(self) -> bool {
        self == Self::SYSTEM
    }

    pub fn to_hex(self) -> String {
        format!("{:032x}", self.0)
    }
}

impl fmt::Debug for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "UserId({})", self.to_hex())
    }
}

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl FromStr for UserId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.len() != 32 {
            return Err(format!("user id must be 32 hex digits, got {} chars", s.len()));
        }
        u128::from_str_radix(s, 16)
            .map(UserId)
            .map_err(|e| format!("invalid user id {s:?}: {e}"))
    }
}

impl Serialize for UserId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for UserId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Unique, never-reused block identifier within a world.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BlockId(pub u64);

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WorldId(pub String);

impl WorldId {
    pub fn new(id: impl Into<String>) -> Self {
        WorldId(id.into())
    }

    /// The personal ("MyWorld") world of a user.
    pub fn personal(user: UserId) -> Self {
        WorldId(format!("my-{}", user.to_hex()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// World ids double as file names, so they are restricted to a safe alphabet.
    pub fn is_valid(&self) -> bool {
        !self.0.is_empty()
            && self.0.len() <= 96
            && self
                .0
                .bytes()
                .all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
    }
}

impl fmt::Display for WorldId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorldKind {
    Personal,
    Shared,
}

/// Whether access to a world requires having recently seen its marker.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum LocationMode {
    #[default]
    Independent,
    Dependent { marker: String },
}

/// A placed cube.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub id: BlockId,
    pub pos: CellPos,
    pub size: SizeClass,
    #[serde(rename = "rgb")]
    pub color: Color,
    pub owner: UserId,
    /// Sequence number of the event that created the block.
    pub seq: Seq,
    #[serde(rename = "at")]
    pub created_at: Millis,
}

impl Block {
    pub fn edge(&self) -> i64 {
        self.size.edge()
    }

    /// Exclusive upper corner in fine units.
    pub fn max_corner(&self) -> CellPos {
        let e = self.edge();
        self.pos.offset(e, e, e)
    }

    /// Every fine cell the block covers.
    pub fn cells(&self) -> impl Iterator<Item = CellPos> + '_ {
        cells_of(self.pos, self.size)
    }
}

/// The fine cells covered by a block of `size` at `pos`.
pub fn cells_of(pos: CellPos, size: SizeClass) -> impl Iterator<Item = CellPos> {
    let e = size.edge();
    (0..e).flat_map(move |dx| {
        (0..e).flat_map(move |dy| (0..e).map(move |dz| pos.offset(dx, dy, dz)))
    })
}
