//! Connection and world registry, independent of any transport.
//!
//! The hub is driven by three inputs: a connection opening, a decoded client
//! message on a connection, and a clock tick. Each returns the frames to send
//! (in order) and connections to close. One hub owns every world, so calling
//! it from behind a single lock gives each world exactly one writer.

use std::collections::{BTreeMap, BTreeSet};

use blocks_core::world::InfoCounts;
use blocks_core::{
    Block, Cursor, LocationMode, Millis, Seq, UserId, WorldError, WorldId, WorldKind, WorldState,
};
use blocks_protocol::{
    decode_str, encode, CatchUp, ClientMsg, LogRecord, RejectReason, Sequenced, SequencerConfig, ServerMsg,
    WorldInfo, WorldSequencer,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::WorldSpec;
use crate::restore::{restore, CorruptLog};
use crate::store::{EventStore, StorageError};

pub type ConnId = u64;

#[derive(Debug, Clone, PartialEq)]
pub enum Outgoing {
    Send(ConnId, ServerMsg),
    /// Drop the connection after sending anything queued before this.
    Close(ConnId, String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HubConfig {
    /// A snapshot is written whenever a world's seq reaches a multiple of this.
    pub snapshot_every: u64,
    pub retention: usize,
    pub dedup_window: usize,
    /// Minimum spacing of Presence broadcasts per world.
    pub presence_interval_ms: Millis,
}

impl Default for HubConfig {
    fn default() -> Self {
        let s = SequencerConfig::default();
        Self { snapshot_every: 1_000, retention: s.retention, dedup_window: s.dedup_window, presence_interval_ms: 100 }
    }
}

#[derive(Debug, Error)]
pub enum HubError {
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error("world {0}: {1}")]
    World(WorldId, WorldError),
    #[error("no world named {0}")]
    UnknownWorld(WorldId),
}

/// Read-only view served over HTTP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSnapshot {
    pub world: WorldId,
    pub kind: WorldKind,
    pub location: LocationMode,
    pub seq: Seq,
    pub blocks: Vec<Block>,
    pub info: InfoCounts,
    pub online: Vec<UserId>,
    pub read_only: bool,
}

#[derive(Debug, Default)]
struct Conn {
    user: Option<UserId>,
    world: Option<WorldId>,
}

#[derive(Debug)]
struct WorldEntry {
    info: WorldInfo,
    seq: WorldSequencer,
    /// Open connections per present user.
    members: BTreeMap<UserId, usize>,
    conns: BTreeSet<ConnId>,
    cursors: BTreeMap<UserId, Cursor>,
    presence_dirty: bool,
    last_presence: Option<Millis>,
    read_only: bool,
}

impl WorldEntry {
    fn snapshot_msg(&self) -> ServerMsg {
        let state = self.seq.state();
        ServerMsg::Snapshot {
            world: self.info.id.clone(),
            seq: state.seq(),
            blocks: state.grid().blocks().copied().collect(),
            info: state.info_counts(),
        }
    }

    fn presence_msg(&self) -> ServerMsg {
        ServerMsg::Presence {
            world: self.info.id.clone(),
            users: self.members.keys().copied().collect(),
            cursors: self.cursors.values().cloned().collect(),
        }
    }
}

pub struct Hub {
    store: Box<dyn EventStore>,
    config: HubConfig,
    shared: Vec<WorldSpec>,
    worlds: BTreeMap<WorldId, WorldEntry>,
    conns: BTreeMap<ConnId, Conn>,
    next_conn: ConnId,
    rng: ChaCha8Rng,
    warnings: Vec<String>,
}

fn sequencer_config(config: &HubConfig, freshness_ms: Millis) -> SequencerConfig {
    SequencerConfig { retention: config.retention, dedup_window: config.dedup_window, freshness_ms }
}

impl Hub {
    /// Opens every configured shared world, restoring it from `store`.
    /// Users left present by a previous run are marked as gone, and empty
    /// worlds flagged for seeding get the starter structure.
    pub fn new(
        store: Box<dyn EventStore>,
        config: HubConfig,
        shared: Vec<WorldSpec>,
        now: Millis,
    ) -> Result<Self, HubError> {
        let mut hub = Self {
            store,
            config,
            shared: Vec::new(),
            worlds: BTreeMap::new(),
            conns: BTreeMap::new(),
            next_conn: 1,
            rng: ChaCha8Rng::from_os_rng(),
            warnings: Vec::new(),
        };
        for spec in &shared {
            let fresh = WorldState::new(spec.id.clone(), WorldKind::Shared, spec.location.clone());
            hub.open_world(fresh, spec.freshness_window_ms, now)?;
            let entry = &hub.worlds[&spec.id];
            if spec.seed_starter && entry.seq.seq() == 0 {
                hub.seed(&spec.id, now)?;
            }
        }
        hub.shared = shared;
        Ok(hub)
    }

    /// Replaces the generator used to mint user ids.
    pub fn with_rng_seed(mut self, seed: u64) -> Self {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self
    }

    fn open_world(&mut self, fresh: WorldState, freshness_ms: Millis, now: Millis) -> Result<(), HubError> {
        let id = fresh.id().clone();
        let info = WorldInfo { id: id.clone(), kind: fresh.kind(), location: fresh.location().clone() };
        let restored = restore(self.store.as_mut(), fresh, sequencer_config(&self.config, freshness_ms))?;
        if let Some(CorruptLog { seq, line, detail }) = &restored.corrupt {
            let msg = format!("world {id}: log cut at line {line} (seq {seq}): {detail}");
            tracing::warn!("{msg}");
            self.warnings.push(msg);
        }
        let entry = WorldEntry {
            info,
            seq: restored.sequencer,
            members: BTreeMap::new(),
            conns: BTreeSet::new(),
            cursors: BTreeMap::new(),
            presence_dirty: false,
            last_presence: None,
            read_only: false,
        };
        self.worlds.insert(id.clone(), entry);
        let stale: Vec<UserId> = self.worlds[&id].seq.state().presence().iter().copied().collect();
        for user in stale {
            let rec = self.worlds.get_mut(&id).expect("inserted").seq.leave(user, now).map_err(|e| HubError::World(id.clone(), e))?;
            self.persist(&id, &rec)?;
        }
        Ok(())
    }

    fn persist(&mut self, world: &WorldId, rec: &LogRecord) -> Result<(), StorageError> {
        self.store.append(world, &encode(rec))?;
        let state = self.worlds[world].seq.state();
        // records sequenced in a batch (seeding) persist after the state has moved on
        if rec.seq.is_multiple_of(self.config.snapshot_every) && state.seq() == rec.seq {
            let json = serde_json::to_string(state).expect("world state serializes");
            self.store.write_snapshot(world, &json)?;
        }
        Ok(())
    }

    /// Persists a freshly sequenced record. On failure the world turns
    /// read-only, falls back to what storage holds, and every connection in
    /// it is closed.
    fn commit(&mut self, world: &WorldId, rec: &LogRecord, out: &mut Vec<Outgoing>) -> bool {
        let Err(err) = self.persist(world, rec) else { return true };
        let msg = format!("world {world} is read-only after a storage failure: {err}");
        tracing::error!("{msg}");
        self.warnings.push(msg.clone());
        let entry = self.worlds.get_mut(world).expect("world is open");
        entry.read_only = true;
        let fresh = WorldState::new(world.clone(), entry.info.kind, entry.info.location.clone());
        let config = *entry.seq.config();
        if let Ok(r) = restore(self.store.as_mut(), fresh, config) {
            self.worlds.get_mut(world).expect("world is open").seq = r.sequencer;
        }
        let entry = self.worlds.get_mut(world).expect("world is open");
        for conn in std::mem::take(&mut entry.conns) {
            out.push(Outgoing::Close(conn, msg.clone()));
            if let Some(c) = self.conns.get_mut(&conn) {
                c.world = None;
            }
        }
        entry.members.clear();
        entry.cursors.clear();
        false
    }

    fn broadcast(&self, world: &WorldId, msg: &ServerMsg, skip: Option<ConnId>, out: &mut Vec<Outgoing>) {
        for conn in &self.worlds[world].conns {
            if Some(*conn) != skip {
                out.push(Outgoing::Send(*conn, msg.clone()));
            }
        }
    }

    fn event(world: &WorldId, rec: LogRecord) -> ServerMsg {
        ServerMsg::Event { world: world.clone(), record: rec }
    }

    /// Seeds the starter structure into an open shared world. Returns the
    /// number of blocks placed.
    pub fn seed(&mut self, world: &WorldId, now: Millis) -> Result<usize, HubError> {
        let entry = self.worlds.get_mut(world).ok_or_else(|| HubError::UnknownWorld(world.clone()))?;
        let records = entry.seq.seed_starter(now).map_err(|e| HubError::World(world.clone(), e))?;
        let mut out = Vec::new();
        for rec in &records {
            if !self.commit(world, rec, &mut out) {
                return Err(HubError::Storage(StorageError::Injected));
            }
            self.broadcast(world, &Self::event(world, rec.clone()), None, &mut out);
        }
        Ok(records.len())
    }

    pub fn connect(&mut self) -> ConnId {
        let id = self.next_conn;
        self.next_conn += 1;
        self.conns.insert(id, Conn::default());
        id
    }

    pub fn disconnect(&mut self, conn: ConnId, now: Millis) -> Vec<Outgoing> {
        let mut out = Vec::new();
        self.leave_world(conn, now, &mut out);
        self.conns.remove(&conn);
        out
    }

    /// Decodes one frame and handles it; undecodable frames are rejected.
    pub fn handle_frame(&mut self, conn: ConnId, frame: &str, now: Millis) -> Vec<Outgoing> {
        match decode_str::<ClientMsg>(frame) {
            Ok(msg) => self.handle(conn, msg, now),
            Err(e) => vec![Outgoing::Send(conn, ServerMsg::reject(None, RejectReason::Malformed, e.to_string()))],
        }
    }

    pub fn handle(&mut self, conn: ConnId, msg: ClientMsg, now: Millis) -> Vec<Outgoing> {
        let mut out = Vec::new();
        let Some(c) = self.conns.get(&conn) else { return out };
        let (greeted, joined) = (c.user, c.world.clone());
        let reject = |out: &mut Vec<Outgoing>, reason, detail: &str| {
            out.push(Outgoing::Send(conn, ServerMsg::reject(msg.op_id(), reason, detail)));
        };
        let user = match (&msg, greeted) {
            (ClientMsg::Hello { user }, None) => {
                self.hello(conn, *user, now, &mut out);
                return out;
            }
            (ClientMsg::Hello { .. }, Some(_)) => {
                reject(&mut out, RejectReason::Malformed, "already greeted");
                return out;
            }
            (_, None) => {
                reject(&mut out, RejectReason::Malformed, "send Hello first");
                return out;
            }
            (_, Some(u)) => u,
        };
        match &msg {
            ClientMsg::Hello { .. } => unreachable!("handled above"),
            ClientMsg::JoinWorld { world, since } => self.join(conn, user, world, *since, now, &mut out),
            ClientMsg::Leave => self.leave_world(conn, now, &mut out),
            ClientMsg::CursorUpdate { ray, size, rgb } => {
                let Some(world) = joined.clone() else {
                    reject(&mut out, RejectReason::NotJoined, "join a world first");
                    return out;
                };
                let entry = self.worlds.get_mut(&world).expect("joined world is open");
                let cursor = Cursor::aim(entry.seq.state().grid(), user, *ray, *size, *rgb);
                entry.cursors.insert(user, cursor);
                entry.presence_dirty = true;
            }
            ClientMsg::AddBlock { .. }
            | ClientMsg::DeleteBlock { .. }
            | ClientMsg::Undo { .. }
            | ClientMsg::MarkerObserved { .. } => {
                let Some(world) = joined.clone() else {
                    reject(&mut out, RejectReason::NotJoined, "join a world first");
                    return out;
                };
                let entry = self.worlds.get_mut(&world).expect("joined world is open");
                if entry.read_only {
                    reject(&mut out, RejectReason::Unavailable, "world is read-only");
                    return out;
                }
                match entry.seq.sequence_op(&msg, user, now) {
                    Ok(Sequenced::Fresh(rec)) => {
                        if self.commit(&world, &rec, &mut out) {
                            self.broadcast(&world, &Self::event(&world, rec), None, &mut out);
                        }
                    }
                    Ok(Sequenced::Duplicate(rec)) => out.push(Outgoing::Send(conn, Self::event(&world, rec))),
                    Err(r) => out.push(Outgoing::Send(conn, ServerMsg::reject(r.op, r.reason, r.detail))),
                }
            }
        }
        out
    }

    fn hello(&mut self, conn: ConnId, user: Option<UserId>, now: Millis, out: &mut Vec<Outgoing>) {
        let user = match user {
            Some(u) if !u.is_system() => u,
            Some(_) => {
                out.push(Outgoing::Send(conn, ServerMsg::reject(None, RejectReason::Malformed, "reserved user id")));
                return;
            }
            None => UserId::random(&mut self.rng),
        };
        let personal = WorldId::personal(user);
        if !self.worlds.contains_key(&personal) {
            if let Err(e) = self.open_world(WorldState::personal(user), blocks_core::anchor::DEFAULT_FRESHNESS_MS, now) {
                out.push(Outgoing::Close(conn, format!("cannot open personal world: {e}")));
                return;
            }
        }
        self.conns.get_mut(&conn).expect("checked by caller").user = Some(user);
        let worlds = self.world_infos();
        out.push(Outgoing::Send(conn, ServerMsg::Welcome { user, personal, worlds }));
    }

    fn may_join(&self, user: UserId, world: &WorldId) -> bool {
        self.shared.iter().any(|s| &s.id == world) || *world == WorldId::personal(user)
    }

    fn join(&mut self, conn: ConnId, user: UserId, world: &WorldId, since: Option<Seq>, now: Millis, out: &mut Vec<Outgoing>) {
        if !self.may_join(user, world) || !self.worlds.contains_key(world) {
            out.push(Outgoing::Send(conn, ServerMsg::reject(None, RejectReason::UnknownWorld, world.as_str())));
            return;
        }
        let current = self.conns[&conn].world.clone();
        if current.as_ref() != Some(world) {
            if current.is_some() {
                self.leave_world(conn, now, out);
            }
            let entry = self.worlds.get_mut(world).expect("checked above");
            if entry.read_only {
                out.push(Outgoing::Send(conn, ServerMsg::reject(None, RejectReason::Unavailable, "world is read-only")));
                return;
            }
            if !entry.members.contains_key(&user) {
                let rec = match entry.seq.join(user, now) {
                    Ok(rec) => rec,
                    Err(e) => {
                        out.push(Outgoing::Send(conn, ServerMsg::reject(None, RejectReason::Malformed, e.to_string())));
                        return;
                    }
                };
                if !self.commit(world, &rec, out) {
                    out.push(Outgoing::Close(conn, "world is read-only".into()));
                    return;
                }
                self.broadcast(world, &Self::event(world, rec), None, out);
            }
            let entry = self.worlds.get_mut(world).expect("checked above");
            *entry.members.entry(user).or_insert(0) += 1;
            entry.conns.insert(conn);
            entry.presence_dirty = true;
            self.conns.get_mut(&conn).expect("checked by caller").world = Some(world.clone());
        }
        let entry = &self.worlds[world];
        let reply = match since.map(|s| entry.seq.catch_up(s)) {
            None => entry.snapshot_msg(),
            Some(Ok(CatchUp::Events(events))) => ServerMsg::CatchUp { world: world.clone(), events },
            Some(Ok(CatchUp::Snapshot { .. })) => entry.snapshot_msg(),
            Some(Err(e)) => {
                out.push(Outgoing::Send(conn, ServerMsg::reject(None, RejectReason::FutureSeq, e.to_string())));
                entry.snapshot_msg()
            }
        };
        out.push(Outgoing::Send(conn, reply));
        out.push(Outgoing::Send(conn, entry.presence_msg()));
    }

    fn leave_world(&mut self, conn: ConnId, now: Millis, out: &mut Vec<Outgoing>) {
        let Some(c) = self.conns.get_mut(&conn) else { return };
        let (Some(world), Some(user)) = (c.world.take(), c.user) else { return };
        let entry = self.worlds.get_mut(&world).expect("joined world is open");
        entry.conns.remove(&conn);
        entry.presence_dirty = true;
        let count = entry.members.get_mut(&user).expect("member of joined world");
        *count -= 1;
        if *count > 0 {
            return;
        }
        entry.members.remove(&user);
        entry.cursors.remove(&user);
        if entry.read_only {
            return;
        }
        if let Ok(rec) = entry.seq.leave(user, now) {
            if self.commit(&world, &rec, out) {
                self.broadcast(&world, &Self::event(&world, rec), None, out);
            }
        }
    }

    /// Emits coalesced Presence updates for worlds whose users or cursors changed.
    pub fn tick(&mut self, now: Millis) -> Vec<Outgoing> {
        let mut out = Vec::new();
        let interval = self.config.presence_interval_ms;
        for entry in self.worlds.values_mut() {
            let due = entry.last_presence.is_none_or(|t| now.saturating_sub(t) >= interval);
            if entry.presence_dirty && due {
                let msg = entry.presence_msg();
                for conn in &entry.conns {
                    out.push(Outgoing::Send(*conn, msg.clone()));
                }
                entry.presence_dirty = false;
                entry.last_presence = Some(now);
            }
        }
        out
    }

    pub fn world_infos(&self) -> Vec<WorldInfo> {
        self.shared
            .iter()
            .map(|s| WorldInfo { id: s.id.clone(), kind: WorldKind::Shared, location: s.location.clone() })
            .collect()
    }

    pub fn state(&self, world: &WorldId) -> Option<&WorldState> {
        self.worlds.get(world).map(|e| e.seq.state())
    }

    pub fn sequencer(&self, world: &WorldId) -> Option<&WorldSequencer> {
        self.worlds.get(world).map(|e| &e.seq)
    }

    pub fn is_read_only(&self, world: &WorldId) -> bool {
        self.worlds.get(world).is_some_and(|e| e.read_only)
    }

    pub fn snapshot(&self, world: &WorldId) -> Option<WorldSnapshot> {
        let e = self.worlds.get(world)?;
        let state = e.seq.state();
        Some(WorldSnapshot {
            world: world.clone(),
            kind: state.kind(),
            location: state.location().clone(),
            seq: state.seq(),
            blocks: state.grid().blocks().copied().collect(),
            info: state.info_counts(),
            online: state.presence().iter().copied().collect(),
            read_only: e.read_only,
        })
    }

    /// The world's log as stored, one record per line.
    pub fn export(&self, world: &WorldId) -> Result<String, HubError> {
        if !self.worlds.contains_key(world) {
            return Err(HubError::UnknownWorld(world.clone()));
        }
        Ok(self.store.export(world)?)
    }

    pub fn user_of(&self, conn: ConnId) -> Option<UserId> {
        self.conns.get(&conn)?.user
    }

    pub fn world_of(&self, conn: ConnId) -> Option<&WorldId> {
        self.conns.get(&conn)?.world.as_ref()
    }

    /// Restore and storage warnings collected so far.
    pub fn take_warnings(&mut self) -> Vec<String> {
        std::mem::take(&mut self.warnings)
    }
}
