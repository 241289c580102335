//! Bot behaviors, looked up by the name a scenario gives them.

use std::collections::BTreeMap;

use blocks_core::placement::{place_from_hit, random_default_color, raycast};
use blocks_core::starter::starter_template;
use blocks_core::{BlockGrid, BlockId, CellPos, Color, Millis, Ray, SizeClass, UserId, FINE_UNIT_M};
use nalgebra::Vector3;
use rand::{Rng, RngCore};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::Value;

/// What a bot can see when deciding its next move.
pub struct BotView<'a> {
    pub user: UserId,
    pub grid: &'a BlockGrid,
    pub now: Millis,
    /// Index of the current session in the bot's schedule.
    pub session: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Action {
    Add { pos: CellPos, size: SizeClass, color: Color },
    Delete(BlockId),
    Undo,
    Cursor { ray: Ray, size: SizeClass, color: Color },
    /// Nothing to do yet; ask again after the next pause.
    Wait,
    /// Nothing more to do this session.
    Done,
}

pub trait Behavior {
    fn name(&self) -> &'static str;

    fn start_session(&mut self, _index: usize) {}

    fn next(&mut self, view: &BotView<'_>, rng: &mut dyn RngCore) -> Action;

    /// Called once a mutating action is acknowledged or refused.
    fn outcome(&mut self, _action: &Action, _accepted: bool) {}
}

pub type Factory = fn(&Value) -> Result<Box<dyn Behavior>, String>;

pub struct Registry {
    factories: BTreeMap<&'static str, Factory>,
}

impl Registry {
    pub fn empty() -> Self {
        Self { factories: BTreeMap::new() }
    }

    /// BuildTable, BuildTower, FreeBuild, Vandal and Lurker.
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register("BuildTable", |p| Ok(Box::new(BuildTable::new(params(p)?))));
        r.register("BuildTower", |p| Ok(Box::new(BuildTower::new(params(p)?))));
        r.register("FreeBuild", |p| Ok(Box::new(FreeBuild::new(params(p)?)?)));
        r.register("Vandal", |p| Ok(Box::new(Vandal::new(params(p)?))));
        r.register("Lurker", |p| Ok(Box::new(Lurker::new(params(p)?))));
        r
    }

    pub fn register(&mut self, name: &'static str, factory: Factory) {
        self.factories.insert(name, factory);
    }

    pub fn build(&self, name: &str, params: &Value) -> Result<Box<dyn Behavior>, String> {
        let f = self.factories.get(name).ok_or_else(|| {
            format!("unknown behavior {name:?} (known: {})", self.names().join(", "))
        })?;
        f(params)
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.factories.keys().copied().collect()
    }
}

impl Default for Registry {
    fn default() -> Self {
        Self::builtin()
    }
}

fn params<T: DeserializeOwned>(v: &Value) -> Result<T, String> {
    let v = if v.is_null() { Value::Object(Default::default()) } else { v.clone() };
    serde_json::from_value(v).map_err(|e| format!("bad params: {e}"))
}

/// A ray straight down onto the centre of a column of `size` cells.
fn drop_ray(x: i64, z: i64, size: SizeClass) -> Ray {
    let half = size.edge() as f64 / 2.0;
    let o = Vector3::new((x as f64 + half) * FINE_UNIT_M, 100.0, (z as f64 + half) * FINE_UNIT_M);
    Ray::new(o, Vector3::new(0.0, -1.0, 0.0)).expect("unit direction")
}

fn pick<T: Copy>(items: &[T], rng: &mut dyn RngCore) -> Option<T> {
    (!items.is_empty()).then(|| items[rng.random_range(0..items.len())])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TableBlock {
    pub pos: CellPos,
    pub size: SizeClass,
    pub color: Color,
}

/// The finished starter table: four legs of three Medium blocks under a 6x3
/// Medium top. Colors follow the starter template.
pub fn finished_table() -> Vec<TableBlock> {
    let t = starter_template();
    let color_at = |pos: CellPos| t.iter().find(|b| b.pos == pos).map(|b| b.color).expect("template has the block");
    let (leg, top) = (color_at(CellPos::new(0, 0, 0)), color_at(CellPos::new(0, 6, 0)));
    let m = SizeClass::Medium;
    let mut out = Vec::new();
    for x in [0, 10] {
        for z in [0, 4] {
            for y in [0, 2, 4] {
                out.push(TableBlock { pos: CellPos::new(x, y, z), size: m, color: leg });
            }
        }
    }
    for x in (0..12).step_by(2) {
        for z in (0..6).step_by(2) {
            out.push(TableBlock { pos: CellPos::new(x, 6, z), size: m, color: top });
        }
    }
    out.sort_by_key(|b| (b.pos.y, b.pos.x, b.pos.z));
    out
}

/// Anything in the column above the tabletop is a stray.
fn is_stray(pos: CellPos) -> bool {
    (0..12).contains(&pos.x) && (0..6).contains(&pos.z) && pos.y >= 8
}

/// Completes the starter table: adds missing blocks bottom-up, removes
/// whatever is in their way, then deletes strays. Keeps watching for damage.
pub struct BuildTable {
    target: Vec<TableBlock>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NoParams {}

impl BuildTable {
    fn new(_: NoParams) -> Self {
        Self { target: finished_table() }
    }
}

impl Behavior for BuildTable {
    fn name(&self) -> &'static str {
        "BuildTable"
    }

    fn next(&mut self, view: &BotView<'_>, _rng: &mut dyn RngCore) -> Action {
        for t in &self.target {
            if view.grid.block_at(t.pos).is_some_and(|b| b.pos == t.pos && b.size == t.size) {
                continue;
            }
            return match view.grid.first_conflict(t.pos, t.size) {
                Some((_, id)) => Action::Delete(id),
                None => Action::Add { pos: t.pos, size: t.size, color: t.color },
            };
        }
        match view.grid.blocks().find(|b| is_stray(b.pos)) {
            Some(b) => Action::Delete(b.id),
            None => Action::Wait,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TowerParams {
    height: u32,
    #[serde(default = "tower_column")]
    column: [i64; 2],
    #[serde(default = "small")]
    size: SizeClass,
}

fn tower_column() -> [i64; 2] {
    [40, 40]
}

fn small() -> SizeClass {
    SizeClass::Small
}

/// Stacks `height` blocks on one column by tapping straight down on it. Each
/// session starts a new column two block widths further along +x.
pub struct BuildTower {
    p: TowerParams,
    column: [i64; 2],
    issued: u32,
    color: Option<Color>,
}

impl BuildTower {
    fn new(p: TowerParams) -> Self {
        Self { column: p.column, p, issued: 0, color: None }
    }
}

impl Behavior for BuildTower {
    fn name(&self) -> &'static str {
        "BuildTower"
    }

    fn start_session(&mut self, index: usize) {
        self.column = [self.p.column[0] + 2 * self.p.size.edge() * index as i64, self.p.column[1]];
        self.issued = 0;
    }

    fn next(&mut self, view: &BotView<'_>, rng: &mut dyn RngCore) -> Action {
        if self.issued >= self.p.height {
            return Action::Done;
        }
        let ray = drop_ray(self.column[0], self.column[1], self.p.size);
        let Some(hit) = raycast(view.grid, &ray) else { return Action::Wait };
        self.issued += 1;
        let color = *self.color.get_or_insert_with(|| random_default_color(rng.next_u64()));
        Action::Add { pos: place_from_hit(&hit, self.p.size), size: self.p.size, color }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FreeParams {
    /// Accepted adds per session.
    count: u32,
    /// `[x, z, extent]` in fine units.
    #[serde(default = "free_region")]
    region: [i64; 3],
    #[serde(default)]
    undo_rate: f64,
    #[serde(default)]
    delete_rate: f64,
    #[serde(default, rename = "size")]
    fixed_size: Option<SizeClass>,
}

fn free_region() -> [i64; 3] {
    [-60, -60, 40]
}

/// Taps at random spots in a square region, with slightly tilted rays so
/// blocks land on tops and sides. Optionally undoes or deletes its own blocks.
pub struct FreeBuild {
    p: FreeParams,
    added: u32,
}

impl FreeBuild {
    fn new(p: FreeParams) -> Result<Self, String> {
        let ok = |r: f64| (0.0..=1.0).contains(&r);
        if !ok(p.undo_rate) || !ok(p.delete_rate) || p.undo_rate + p.delete_rate > 1.0 {
            return Err("undo_rate and delete_rate must be in [0, 1] and sum to at most 1".into());
        }
        if p.region[2] <= 0 {
            return Err("region extent must be positive".into());
        }
        Ok(Self { p, added: 0 })
    }
}

impl Behavior for FreeBuild {
    fn name(&self) -> &'static str {
        "FreeBuild"
    }

    fn start_session(&mut self, _index: usize) {
        self.added = 0;
    }

    fn next(&mut self, view: &BotView<'_>, rng: &mut dyn RngCore) -> Action {
        if self.added >= self.p.count {
            return Action::Done;
        }
        let own: Vec<BlockId> = view.grid.blocks().filter(|b| b.owner == view.user).map(|b| b.id).collect();
        let r: f64 = rng.random();
        if !own.is_empty() && r < self.p.undo_rate {
            return Action::Undo;
        }
        if r < self.p.undo_rate + self.p.delete_rate {
            if let Some(id) = pick(&own, rng) {
                return Action::Delete(id);
            }
        }
        let [x0, z0, extent] = self.p.region;
        let x = (x0 + rng.random_range(0..extent)) as f64 * FINE_UNIT_M;
        let z = (z0 + rng.random_range(0..extent)) as f64 * FINE_UNIT_M;
        let tilt = Vector3::new(rng.random_range(-0.3..0.3), -1.0, rng.random_range(-0.3..0.3));
        let origin = Vector3::new(x, 3.0, z) - tilt * 3.0;
        let ray = Ray::towards(origin, tilt).expect("non-zero direction");
        let size = self.p.fixed_size.unwrap_or_else(|| SizeClass::ALL[rng.random_range(0..3)]);
        let color = random_default_color(rng.next_u64());
        match raycast(view.grid, &ray) {
            Some(hit) => Action::Add { pos: place_from_hit(&hit, size), size, color },
            None => Action::Wait,
        }
    }

    fn outcome(&mut self, action: &Action, accepted: bool) {
        if accepted && matches!(action, Action::Add { .. }) {
            self.added += 1;
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VandalParams {
    /// Accepted deletions over the whole run.
    budget: u32,
}

/// Deletes other people's blocks (never the starter structure).
pub struct Vandal {
    budget: u32,
    done: u32,
}

impl Vandal {
    fn new(p: VandalParams) -> Self {
        Self { budget: p.budget, done: 0 }
    }
}

impl Behavior for Vandal {
    fn name(&self) -> &'static str {
        "Vandal"
    }

    fn next(&mut self, view: &BotView<'_>, rng: &mut dyn RngCore) -> Action {
        if self.done >= self.budget {
            return Action::Done;
        }
        let foreign: Vec<BlockId> = view
            .grid
            .blocks()
            .filter(|b| b.owner != view.user && !b.owner.is_system())
            .map(|b| b.id)
            .collect();
        pick(&foreign, rng).map_or(Action::Wait, Action::Delete)
    }

    fn outcome(&mut self, action: &Action, accepted: bool) {
        if accepted && matches!(action, Action::Delete(_)) {
            self.done += 1;
        }
    }
}

/// Looks around: cursor updates only.
pub struct Lurker;

impl Lurker {
    fn new(_: NoParams) -> Self {
        Lurker
    }
}

impl Behavior for Lurker {
    fn name(&self) -> &'static str {
        "Lurker"
    }

    fn next(&mut self, _view: &BotView<'_>, rng: &mut dyn RngCore) -> Action {
        let eye = Vector3::new(rng.random_range(-1.0..1.0), 1.5, rng.random_range(-1.0..1.0));
        let look = Vector3::new(rng.random_range(-0.5..0.5), 0.0, rng.random_range(-0.5..0.5));
        let ray = Ray::towards(eye, look - eye).expect("eye is above the target");
        Action::Cursor { ray, size: SizeClass::Medium, color: random_default_color(rng.next_u64()) }
    }
}
