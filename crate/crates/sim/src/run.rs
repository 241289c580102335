//! The discrete-event loop: bots, a lossy network and one hub on a virtual clock.
//!
//! Each bot has one connection at a time. Messages on a connection arrive in
//! the order they were sent, after the configured latency plus seeded jitter,
//! unless the seeded coin drops them. Closing a connection is immediate and
//! loses whatever was still in flight on it.

use std::collections::{BTreeMap, BTreeSet};
use std::io;
use std::path::{Path, PathBuf};

use blocks_analytics::Report;
use blocks_core::{Block, BlockId, Millis, Pose, Seq, UserId, WorldId, WorldKind, WorldState};
use blocks_protocol::{Applied, ClientMsg, LogRecord, OpId, RejectReason, Replica, ServerMsg};
use blocks_server::{ConnId, Hub, HubConfig, HubError, MemStore, Outgoing};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::behavior::{Action, Behavior, BotView, Registry};
use crate::scenario::{Scenario, ScenarioInvalid};
use crate::truth::GroundTruth;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Invalid(#[from] ScenarioInvalid),
    #[error("server: {0}")]
    Hub(#[from] HubError),
    #[error("cannot read back the server log: {0}")]
    Log(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct NetStats {
    pub sent: u64,
    pub dropped: u64,
    /// Messages still in flight when their connection closed.
    pub discarded: u64,
    pub resends: u64,
    pub resyncs: u64,
    pub cuts: u64,
    /// Rejects received by bots, by reason.
    pub rejects: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BotOutcome {
    pub name: String,
    pub user: UserId,
    pub behavior: String,
    pub seq: Seq,
    pub blocks: Vec<Block>,
    /// Still connected when the run settled, as opposed to gone earlier.
    pub connected_at_end: bool,
    /// Every message the bot sent, resends included.
    #[serde(skip)]
    pub sent: Vec<ClientMsg>,
}

impl BotOutcome {
    /// Distinct mutating commands, first sends only.
    pub fn commands(&self) -> Vec<&ClientMsg> {
        let mut seen = BTreeSet::new();
        self.sent.iter().filter(|m| m.op_id().is_some_and(|op| seen.insert(op))).collect()
    }
}

#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub scenario: String,
    pub seed: u64,
    pub world: WorldId,
    pub sync_window_ms: Millis,
    /// NDJSON log of every world that recorded anything.
    pub logs: BTreeMap<WorldId, String>,
    pub bots: Vec<BotOutcome>,
    /// Server seq once the run settled, before the remaining bots were closed.
    pub settled_seq: Seq,
    pub server_seq: Seq,
    pub server_blocks: Vec<Block>,
    pub truth: GroundTruth,
    pub stats: NetStats,
    /// Replica mismatches and failures to settle; empty when everything converged.
    pub problems: Vec<String>,
    /// Virtual time the run finished at.
    pub finished_at: Millis,
}

impl SimOutcome {
    pub fn converged(&self) -> bool {
        self.problems.is_empty()
    }

    pub fn truth_report(&self) -> Report {
        self.truth.report(self.sync_window_ms)
    }

    pub fn log(&self) -> &str {
        self.logs.get(&self.world).map_or("", String::as_str)
    }

    /// Writes `<world>.ndjson` per world, `replicas.json` and `truth.json`.
    pub fn write_to(&self, dir: &Path) -> io::Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        for (world, log) in &self.logs {
            let p = dir.join(format!("{world}.ndjson"));
            std::fs::write(&p, log)?;
            written.push(p);
        }
        let p = dir.join("replicas.json");
        std::fs::write(&p, serde_json::to_string_pretty(&self.bots)? + "\n")?;
        written.push(p);
        let truth = serde_json::json!({
            "scenario": self.scenario,
            "seed": self.seed,
            "world": self.world,
            "sync_window_ms": self.sync_window_ms,
            "report": self.truth_report(),
            "counters": self.truth,
            "network": self.stats,
            "converged": self.converged(),
            "problems": self.problems,
        });
        let p = dir.join("truth.json");
        std::fs::write(&p, serde_json::to_string_pretty(&truth)? + "\n")?;
        written.push(p);
        Ok(written)
    }
}

#[derive(Debug)]
enum Ev {
    Open(usize, usize),
    Close(usize),
    Cut(usize),
    Redial(usize, u64),
    Wake(usize, u64),
    ToServer(usize, u64, ClientMsg),
    ToClient(usize, u64, ServerMsg),
    Tick,
    End,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Greeting,
    Joining,
    Joined,
}

struct Live {
    conn: ConnId,
    epoch: u64,
    phase: Phase,
    phase_at: Millis,
    resync_at: Option<Millis>,
    last_sync: Millis,
    marker_at: Option<Millis>,
    /// Latest delivery time per direction, for FIFO order.
    up: Millis,
    down: Millis,
    // what the server has seen on this connection
    server_greeted: bool,
    server_joined: bool,
}

struct Pending {
    op: OpId,
    msg: ClientMsg,
    action: Action,
    sent_at: Millis,
}

struct Bot {
    name: String,
    behavior_name: String,
    user: UserId,
    behavior: Box<dyn Behavior>,
    rng: ChaCha8Rng,
    sessions: Vec<(Millis, Millis)>,
    session: Option<usize>,
    replica: Replica,
    next_op: OpId,
    pending: Option<Pending>,
    /// Owner of each deletion target, as the bot saw it when it chose it.
    targets: BTreeMap<OpId, UserId>,
    live: Option<Live>,
    epoch: u64,
    next_action_at: Millis,
    /// The bot acts only once its replica has caught up with its own last write.
    read_floor: Seq,
    pose: Pose,
    sent: Vec<ClientMsg>,
    departures: Vec<(Seq, BTreeMap<BlockId, Block>)>,
}

struct Sim<'s> {
    sc: &'s Scenario,
    world: WorldId,
    marker: Option<String>,
    hub: Hub,
    queue: BTreeMap<(Millis, u64), Ev>,
    order: u64,
    now: Millis,
    end: Millis,
    resend: Millis,
    net: ChaCha8Rng,
    bots: Vec<Bot>,
    conns: BTreeMap<ConnId, usize>,
    accepted: BTreeSet<(UserId, OpId)>,
    truth: GroundTruth,
    stats: NetStats,
    winding_down: bool,
}

pub fn run_scenario(sc: &Scenario) -> Result<SimOutcome, SimError> {
    run_with(sc, &Registry::builtin())
}

pub fn run_with(sc: &Scenario, registry: &Registry) -> Result<SimOutcome, SimError> {
    sc.validate(registry)?;
    let store = MemStore::new();
    let hub = Hub::new(Box::new(store.clone()), HubConfig::default(), vec![sc.world_spec()], sc.start_at)?
        .with_rng_seed(sc.seed);
    let stream = |k: u64| {
        let mut r = ChaCha8Rng::seed_from_u64(sc.seed);
        r.set_stream(k);
        r
    };
    let mut setup = stream(0);
    let mut bots = Vec::new();
    for (i, b) in sc.bots.iter().enumerate() {
        let user = b.user.unwrap_or_else(|| UserId::random(&mut setup));
        let behavior = registry.build(&b.behavior, &b.params).map_err(ScenarioInvalid::Rule)?;
        bots.push(Bot {
            name: b.name.clone(),
            behavior_name: b.behavior.clone(),
            user,
            behavior,
            rng: stream(2 + i as u64),
            sessions: b.sessions.iter().map(|[j, l]| (sc.start_at + j, sc.start_at + l)).collect(),
            session: None,
            replica: Replica::new(sc.world_id()),
            next_op: 1,
            pending: None,
            targets: BTreeMap::new(),
            live: None,
            epoch: 0,
            next_action_at: 0,
            read_floor: 0,
            pose: Pose::yaw(0.3 * i as f64, Vector3::new(i as f64, 0.0, 0.0), 1.0).expect("valid pose"),
            sent: Vec::new(),
            departures: Vec::new(),
        });
    }
    let mut sim = Sim {
        sc,
        world: sc.world_id(),
        marker: sc.world.marker.clone().filter(|_| sc.world.mode == crate::scenario::WorldMode::Dependent),
        hub,
        queue: BTreeMap::new(),
        order: 0,
        now: sc.start_at,
        end: sc.start_at + sc.duration_ms,
        resend: sc.resend_ms(),
        net: stream(1),
        bots,
        conns: BTreeMap::new(),
        accepted: BTreeSet::new(),
        truth: GroundTruth::default(),
        stats: NetStats::default(),
        winding_down: false,
    };
    sim.schedule(sc.start_at, Ev::Tick);
    sim.schedule(sim.end, Ev::End);
    for b in 0..sim.bots.len() {
        let sessions = sim.bots[b].sessions.clone();
        for (s, (join, leave)) in sessions.iter().enumerate() {
            sim.schedule(*join, Ev::Open(b, s));
            if *leave < sim.end {
                sim.schedule(*leave, Ev::Close(b));
            }
        }
        for _ in 0..sc.network.reconnects {
            let total: Millis = sessions.iter().map(|(j, l)| l - j).sum();
            let mut k = setup.random_range(0..total);
            for (j, l) in &sessions {
                if k < l - j {
                    sim.schedule(j + k.max(1), Ev::Cut(b));
                    break;
                }
                k -= l - j;
            }
        }
    }
    sim.run();
    sim.finish(&store)
}

impl Sim<'_> {
    fn schedule(&mut self, at: Millis, ev: Ev) {
        self.queue.insert((at, self.order), ev);
        self.order += 1;
    }

    fn server_seq(&self) -> Seq {
        self.hub.state(&self.world).map_or(0, WorldState::seq)
    }

    fn run(&mut self) {
        let limit = self.end + self.sc.timing.quiescence_limit_ms;
        while let Some(((at, _), ev)) = self.queue.pop_first() {
            self.now = at;
            if self.winding_down && at > limit {
                break;
            }
            match ev {
                Ev::Open(b, s) => self.open_session(b, s),
                Ev::Close(b) => {
                    let bot = &mut self.bots[b];
                    bot.session = None;
                    bot.pending = None;
                    self.hang_up(b);
                }
                Ev::Cut(b) => {
                    if self.bots[b].live.is_some() {
                        self.stats.cuts += 1;
                        let epoch = self.bots[b].epoch;
                        self.hang_up(b);
                        self.schedule(at + self.sc.timing.reconnect_delay_ms, Ev::Redial(b, epoch));
                    }
                }
                Ev::Redial(b, epoch) => {
                    let bot = &self.bots[b];
                    if bot.session.is_some() && bot.live.is_none() && bot.epoch == epoch {
                        self.dial(b);
                    }
                }
                Ev::Wake(b, epoch) => {
                    if self.bots[b].live.as_ref().is_some_and(|l| l.epoch == epoch) {
                        self.wake(b);
                        self.schedule(at + self.sc.timing.wake_ms, Ev::Wake(b, epoch));
                    }
                }
                Ev::ToServer(b, epoch, msg) => self.deliver_to_server(b, epoch, msg),
                Ev::ToClient(b, epoch, msg) => self.deliver_to_client(b, epoch, msg),
                Ev::Tick => {
                    let out = self.hub.tick(at);
                    self.route(out);
                    self.schedule(at + HubConfig::default().presence_interval_ms, Ev::Tick);
                }
                Ev::End => self.winding_down = true,
            }
            if self.winding_down && self.quiescent() {
                return;
            }
        }
    }

    /// Every connected bot is joined, has nothing unacknowledged and holds
    /// the server's latest seq.
    fn quiescent(&self) -> bool {
        let seq = self.server_seq();
        self.bots.iter().all(|b| match &b.live {
            None => true,
            Some(l) => {
                l.phase == Phase::Joined && l.resync_at.is_none() && b.pending.is_none() && b.replica.seq() == seq
            }
        })
    }

    fn pause(&mut self, b: usize) -> Millis {
        let think = self.sc.timing.think_ms as f64;
        (think * (0.5 + self.bots[b].rng.random::<f64>())) as Millis
    }

    /// Delivery time for the next message on bot `b`'s connection, or `None` if it is lost.
    fn transmit(&mut self, b: usize, up: bool) -> Option<Millis> {
        let net = &self.sc.network;
        let lost = net.drop > 0.0 && self.net.random::<f64>() < net.drop;
        let jitter = if net.jitter_ms > 0 { self.net.random_range(0..=net.jitter_ms) } else { 0 };
        if lost {
            self.stats.dropped += 1;
            return None;
        }
        let live = self.bots[b].live.as_mut().expect("transmit on a live connection");
        let last = if up { &mut live.up } else { &mut live.down };
        let at = (self.now + net.latency_ms + jitter).max(*last);
        *last = at;
        Some(at)
    }

    fn send(&mut self, b: usize, msg: ClientMsg) {
        self.stats.sent += 1;
        self.bots[b].sent.push(msg.clone());
        if let Some(at) = self.transmit(b, true) {
            let epoch = self.bots[b].epoch;
            self.schedule(at, Ev::ToServer(b, epoch, msg));
        }
    }

    fn route(&mut self, out: Vec<Outgoing>) {
        for o in out {
            match o {
                Outgoing::Send(conn, msg) => {
                    let Some(&b) = self.conns.get(&conn) else { continue };
                    if let Some(at) = self.transmit(b, false) {
                        let epoch = self.bots[b].epoch;
                        self.schedule(at, Ev::ToClient(b, epoch, msg));
                    }
                }
                Outgoing::Close(conn, _) => {
                    if let Some(&b) = self.conns.get(&conn) {
                        let epoch = self.bots[b].epoch;
                        self.hang_up(b);
                        self.schedule(self.now + self.sc.timing.reconnect_delay_ms, Ev::Redial(b, epoch));
                    }
                }
            }
        }
    }

    fn open_session(&mut self, b: usize, s: usize) {
        let pause = self.pause(b);
        let bot = &mut self.bots[b];
        bot.session = Some(s);
        bot.behavior.start_session(s);
        bot.next_action_at = self.now + pause;
        self.dial(b);
    }

    fn dial(&mut self, b: usize) {
        let conn = self.hub.connect();
        let now = self.now;
        let bot = &mut self.bots[b];
        bot.epoch += 1;
        bot.live = Some(Live {
            conn,
            epoch: bot.epoch,
            phase: Phase::Greeting,
            phase_at: now,
            resync_at: None,
            last_sync: now,
            marker_at: None,
            up: now,
            down: now,
            server_greeted: false,
            server_joined: false,
        });
        self.conns.insert(conn, b);
        let (user, epoch) = (bot.user, bot.epoch);
        self.send(b, ClientMsg::Hello { user: Some(user) });
        self.schedule(now + self.sc.timing.wake_ms, Ev::Wake(b, epoch));
    }

    fn hang_up(&mut self, b: usize) {
        let Some(live) = self.bots[b].live.take() else { return };
        self.conns.remove(&live.conn);
        let out = self.hub.disconnect(live.conn, self.now);
        let bot = &mut self.bots[b];
        if live.server_joined {
            self.truth.leave(bot.user, self.now);
        }
        bot.departures.push((bot.replica.seq(), bot.replica.grid().block_map().clone()));
        self.route(out);
    }

    fn join_msg(&self, b: usize) -> ClientMsg {
        let seq = self.bots[b].replica.seq();
        ClientMsg::JoinWorld { world: self.world.clone(), since: (seq > 0).then_some(seq) }
    }

    fn resync(&mut self, b: usize) {
        let now = self.now;
        let live = self.bots[b].live.as_mut().expect("resync on a live connection");
        if live.resync_at.is_some_and(|t| now - t < self.resend) {
            return;
        }
        live.resync_at = Some(now);
        self.stats.resyncs += 1;
        let msg = self.join_msg(b);
        self.send(b, msg);
    }

    fn observe_marker(&mut self, b: usize) {
        let Some(marker) = self.marker.clone() else { return };
        let now = self.now;
        let bot = &mut self.bots[b];
        let pose = bot.pose;
        bot.live.as_mut().expect("live").marker_at = Some(now);
        self.send(b, ClientMsg::MarkerObserved { marker, pose, at: now });
    }

    fn wake(&mut self, b: usize) {
        let now = self.now;
        let t = &self.sc.timing;
        let live = self.bots[b].live.as_ref().expect("woken while live");
        match live.phase {
            Phase::Greeting | Phase::Joining => {
                if now - live.phase_at >= self.resend {
                    // Hello or Welcome may have been lost; a second Hello on a
                    // greeted connection is refused, so the join always follows.
                    self.bots[b].live.as_mut().expect("live").phase_at = now;
                    self.stats.resends += 1;
                    let user = self.bots[b].user;
                    self.send(b, ClientMsg::Hello { user: Some(user) });
                    let msg = self.join_msg(b);
                    self.send(b, msg);
                }
            }
            Phase::Joined => {
                let keepalive = if self.winding_down { self.resend } else { t.keepalive_ms };
                let due = match live.resync_at {
                    Some(at) => now - at >= self.resend,
                    None => now - live.last_sync >= keepalive,
                };
                let marker_due =
                    self.marker.is_some() && live.marker_at.is_none_or(|at| now - at >= t.marker_refresh_ms);
                if due {
                    self.resync(b);
                }
                if marker_due && !self.winding_down {
                    self.observe_marker(b);
                }
                let bot = &mut self.bots[b];
                if let Some(p) = bot.pending.as_mut() {
                    if now - p.sent_at >= self.resend {
                        p.sent_at = now;
                        let msg = p.msg.clone();
                        self.stats.resends += 1;
                        self.send(b, msg);
                    }
                    return;
                }
                if !self.winding_down && now >= bot.next_action_at && bot.replica.seq() >= bot.read_floor {
                    self.act(b);
                }
            }
        }
    }

    fn act(&mut self, b: usize) {
        let now = self.now;
        let bot = &mut self.bots[b];
        let Some(session) = bot.session else { return };
        let view = BotView { user: bot.user, grid: bot.replica.grid(), now, session };
        let action = bot.behavior.next(&view, &mut bot.rng);
        let op = bot.next_op;
        let msg = match action {
            Action::Add { pos, size, color } => ClientMsg::AddBlock { op, pos, size, rgb: color },
            Action::Delete(block) => {
                let owner = bot.replica.grid().get(block).map_or(UserId::SYSTEM, |b| b.owner);
                bot.targets.insert(op, owner);
                ClientMsg::DeleteBlock { op, block }
            }
            Action::Undo => ClientMsg::Undo { op },
            Action::Cursor { ray, size, color } => {
                let pause = self.pause(b);
                self.bots[b].next_action_at = now + pause;
                self.send(b, ClientMsg::CursorUpdate { ray, size, rgb: color });
                return;
            }
            Action::Wait => {
                let pause = self.pause(b);
                self.bots[b].next_action_at = now + pause;
                return;
            }
            Action::Done => {
                bot.next_action_at = Millis::MAX;
                return;
            }
        };
        bot.next_op += 1;
        bot.pending = Some(Pending { op, msg: msg.clone(), action, sent_at: now });
        self.send(b, msg);
    }

    fn deliver_to_server(&mut self, b: usize, epoch: u64, msg: ClientMsg) {
        let now = self.now;
        let bot = &mut self.bots[b];
        let user = bot.user;
        let Some(live) = bot.live.as_mut().filter(|l| l.epoch == epoch) else {
            self.stats.discarded += 1;
            return;
        };
        let conn = live.conn;
        match &msg {
            ClientMsg::Hello { .. } => live.server_greeted = true,
            ClientMsg::JoinWorld { world, .. } if live.server_greeted && !live.server_joined && *world == self.world => {
                live.server_joined = true;
                self.truth.join(user, now);
            }
            _ => {}
        }
        let out = self.hub.handle(conn, msg.clone(), now);
        if let Some(op) = msg.op_id() {
            let acked = out.iter().any(|o| {
                matches!(o, Outgoing::Send(c, ServerMsg::Event { record, .. })
                    if *c == conn && record.op == Some(op) && record.origin == user)
            });
            if acked && self.accepted.insert((user, op)) {
                match &msg {
                    ClientMsg::AddBlock { .. } => self.truth.added(user, now),
                    ClientMsg::DeleteBlock { .. } => {
                        let owner = self.bots[b].targets[&op];
                        self.truth.deleted(user, owner);
                    }
                    ClientMsg::Undo { .. } => self.truth.undone(),
                    _ => unreachable!("only mutating commands carry an op"),
                }
            }
        }
        for o in &out {
            if let Outgoing::Send(c, ServerMsg::Reject { reason, .. }) = o {
                if *c == conn {
                    *self.stats.rejects.entry(reason_name(*reason)).or_default() += 1;
                }
            }
        }
        self.route(out);
    }

    fn deliver_to_client(&mut self, b: usize, epoch: u64, msg: ServerMsg) {
        if !self.bots[b].live.as_ref().is_some_and(|l| l.epoch == epoch) {
            self.stats.discarded += 1;
            return;
        }
        match msg {
            ServerMsg::Welcome { .. } => {
                let live = self.bots[b].live.as_mut().expect("checked");
                if live.phase == Phase::Greeting {
                    live.phase = Phase::Joining;
                    live.phase_at = self.now;
                    let join = self.join_msg(b);
                    self.send(b, join);
                }
            }
            ServerMsg::Snapshot { seq, blocks, info, .. } => {
                self.bots[b].replica.reset(seq, &blocks, info);
                self.synced(b);
            }
            ServerMsg::CatchUp { events, .. } => {
                for rec in &events {
                    self.bots[b].replica.apply(rec);
                    self.check_ack(b, rec);
                }
                self.synced(b);
            }
            ServerMsg::Event { record, .. } => {
                if let Applied::Gap { .. } = self.bots[b].replica.apply(&record) {
                    self.resync(b);
                }
                self.check_ack(b, &record);
            }
            ServerMsg::Presence { users, .. } => self.bots[b].replica.set_online(users),
            ServerMsg::Reject { op: Some(op), reason, .. } => {
                if self.bots[b].pending.as_ref().is_none_or(|p| p.op != op) {
                    return;
                }
                if reason == RejectReason::Gated && self.marker.is_some() {
                    self.observe_marker(b);
                    let p = self.bots[b].pending.as_mut().expect("checked");
                    p.sent_at = self.now;
                    let msg = p.msg.clone();
                    self.send(b, msg);
                    return;
                }
                let p = self.bots[b].pending.take().expect("checked");
                let pause = self.pause(b);
                let bot = &mut self.bots[b];
                bot.behavior.outcome(&p.action, false);
                bot.next_action_at = self.now + pause;
            }
            ServerMsg::Reject { op: None, .. } => {}
        }
    }

    fn synced(&mut self, b: usize) {
        let now = self.now;
        let live = self.bots[b].live.as_mut().expect("live");
        live.resync_at = None;
        live.last_sync = now;
        if live.phase == Phase::Joined {
            return;
        }
        live.phase = Phase::Joined;
        self.observe_marker(b);
        // anything unacknowledged from before a reconnect goes out again
        if let Some(p) = self.bots[b].pending.as_mut() {
            p.sent_at = now;
            let msg = p.msg.clone();
            self.send(b, msg);
        }
    }

    fn check_ack(&mut self, b: usize, rec: &LogRecord) {
        let bot = &self.bots[b];
        if rec.origin != bot.user || rec.op.is_none() || bot.pending.as_ref().map(|p| p.op) != rec.op {
            return;
        }
        let pause = self.pause(b);
        let bot = &mut self.bots[b];
        let p = bot.pending.take().expect("checked");
        bot.behavior.outcome(&p.action, true);
        bot.read_floor = bot.read_floor.max(rec.seq);
        bot.next_action_at = self.now + pause;
    }

    fn finish(mut self, store: &MemStore) -> Result<SimOutcome, SimError> {
        let mut problems = Vec::new();
        if !self.quiescent() {
            problems.push(format!("replicas did not settle within {} ms after the end", self.sc.timing.quiescence_limit_ms));
        }
        let server: BTreeMap<BlockId, Block> =
            self.hub.state(&self.world).map(|s| s.grid().block_map().clone()).unwrap_or_default();
        let seq = self.server_seq();
        let connected: Vec<bool> = self.bots.iter().map(|b| b.live.is_some()).collect();
        for bot in &self.bots {
            if bot.live.is_some() && (bot.replica.seq() != seq || bot.replica.grid().block_map() != &server) {
                problems.push(format!("{}: replica at seq {} differs from the server at seq {seq}", bot.name, bot.replica.seq()));
            }
        }
        for b in 0..self.bots.len() {
            self.bots[b].session = None;
            self.hang_up(b);
        }
        let mut logs = BTreeMap::new();
        for id in store.world_ids() {
            let log = store.world(&id).log;
            if !log.is_empty() {
                logs.insert(id, log);
            }
        }
        let log = logs.get(&self.world).map_or("", String::as_str);
        problems.extend(check_departures(&self.world, &self.sc.world_spec().location, log, &self.bots)?);
        let state = self.hub.state(&self.world).expect("scenario world is open");
        Ok(SimOutcome {
            scenario: self.sc.name.clone(),
            seed: self.sc.seed,
            world: self.world.clone(),
            sync_window_ms: self.sc.sync_window_ms,
            logs,
            settled_seq: seq,
            server_seq: state.seq(),
            server_blocks: state.grid().blocks().copied().collect(),
            bots: self
                .bots
                .iter_mut()
                .zip(connected)
                .map(|(b, connected_at_end)| BotOutcome {
                    name: b.name.clone(),
                    user: b.user,
                    behavior: b.behavior_name.clone(),
                    seq: b.replica.seq(),
                    blocks: b.replica.grid().blocks().copied().collect(),
                    connected_at_end,
                    sent: std::mem::take(&mut b.sent),
                })
                .collect(),
            truth: self.truth,
            stats: self.stats,
            problems,
            finished_at: self.now,
        })
    }
}

fn reason_name(r: RejectReason) -> String {
    serde_json::to_value(r).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default()
}

/// Every replica a bot held when a connection closed must equal the server's
/// state at that replica's seq, rebuilt by replaying the server log.
fn check_departures(
    world: &WorldId,
    location: &blocks_core::LocationMode,
    log: &str,
    bots: &[Bot],
) -> Result<Vec<String>, SimError> {
    let mut wanted: BTreeMap<Seq, Vec<(&str, &BTreeMap<BlockId, Block>)>> = BTreeMap::new();
    for bot in bots {
        for (seq, blocks) in &bot.departures {
            wanted.entry(*seq).or_default().push((&bot.name, blocks));
        }
    }
    let mut problems = Vec::new();
    let mut state = WorldState::new(world.clone(), WorldKind::Shared, location.clone());
    let mut check = |state: &WorldState| {
        for (name, blocks) in wanted.remove(&state.seq()).unwrap_or_default() {
            if state.grid().block_map() != blocks {
                problems.push(format!("{name}: replica left at seq {} differs from the server's history", state.seq()));
            }
        }
    };
    check(&state);
    for (i, line) in log.lines().enumerate() {
        let rec: LogRecord = serde_json::from_str(line).map_err(|e| SimError::Log(format!("line {}: {e}", i + 1)))?;
        state.apply_event(&rec.ev).map_err(|e| SimError::Log(format!("line {}: {e}", i + 1)))?;
        check(&state);
    }
    for (seq, left) in wanted {
        for (name, _) in left {
            problems.push(format!("{name}: replica left at seq {seq}, beyond the server log"));
        }
    }
    Ok(problems)
}
