//! End-to-end acceptance checks. Runs without the test harness so every
//! criterion prints exactly one PASS/FAIL line, then exits non-zero if any
//! failed.

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use blocks_analytics::{parse_log, participation_balance, summarize};
use blocks_core::anchor::{from_marker_frame, rebase, to_marker_frame};
use blocks_core::oracles::{brute_force_raycast, occupancy_matches, overlapping_pairs, to_marker_by_matrix, OracleHit};
use blocks_core::placement::raycast;
use blocks_core::{
    Block, BlockGrid, BlockId, CellPos, Color, HitKind, LocationMode, Pose, Ray, SizeClass, UserId, WorldError,
    WorldKind, WorldState,
};
use blocks_protocol::{ClientMsg, LogRecord, RejectReason, Sequenced, SequencerConfig, ServerMsg, WorldSequencer};
use blocks_server::{ConnId, Hub, HubConfig, MemStore, Outgoing, StoredWorld, WorldSpec};
use blocks_sim::fuzz::concurrent_schedule;
use blocks_sim::{run_scenario, Scenario, SimOutcome};
use nalgebra::{UnitQuaternion, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

const SIZES: [SizeClass; 3] = SizeClass::ALL;

fn main() -> ExitCode {
    let mut failed = 0;
    let mut report = |name: &str, started: Instant, result: Check| {
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS  {name}: {detail} [{secs:.2} s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail} [{secs:.2} s]");
            }
        }
    };

    let t = Instant::now();
    report("participation balance anchors", t, balance_anchors());
    let t = Instant::now();
    report("occupancy and no-overlap fuzz", t, within(t, 30, occupancy_fuzz()));
    let t = Instant::now();
    report("raycast against brute force", t, within(t, 30, raycast_oracle()));

    let t = Instant::now();
    let fuzz_runs = fuzz_outcomes(1_000, 0.2);
    let sequencer = fuzz_runs.as_ref().map_err(Clone::clone).and_then(|runs| sequencer_correctness(runs));
    report("sequencer correctness", t, within(t, 60, sequencer));

    let t = Instant::now();
    report("replay determinism", t, within(t, 60, replay_determinism()));
    let t = Instant::now();
    report("anchor invariance", t, anchor_invariance());

    let t = Instant::now();
    let closure = fuzz_runs.as_ref().map_err(Clone::clone).and_then(|runs| analytics_closure(runs));
    report("analytics closure", t, closure);
    let t = Instant::now();
    report("undo contract", t, undo_contract());

    if failed == 0 {
        println!("acceptance: all criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} criteria failed");
        ExitCode::FAILURE
    }
}

fn within(started: Instant, limit_s: u64, result: Check) -> Check {
    let took = started.elapsed();
    match result {
        Ok(d) if took > Duration::from_secs(limit_s) => Err(format!("{d}, but took {took:.1?} (limit {limit_s} s)")),
        other => other,
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn balance_anchors() -> Check {
    let even = participation_balance(&[0.5, 0.5]).map_err(|e| e.to_string())?;
    let lopsided = participation_balance(&[1.0, 0.0]).map_err(|e| e.to_string())?;
    ensure((even - 1.0).abs() <= 1e-12, || format!("(0.5, 0.5) gave {even}"))?;
    ensure((lopsided - 0.5).abs() <= 1e-12, || format!("(1, 0) gave {lopsided}"))?;
    Ok(format!("(0.5, 0.5) -> {even}, (1, 0) -> {lopsided}"))
}

fn boxes_overlap(a: CellPos, sa: SizeClass, b: CellPos, sb: SizeClass) -> bool {
    (0..3).all(|k| a.get(k) < b.get(k) + sb.edge() && b.get(k) < a.get(k) + sa.edge())
}

fn random_cell(rng: &mut ChaCha8Rng, half: i64, height: i64) -> CellPos {
    CellPos::new(rng.random_range(-half..half), rng.random_range(0..height), rng.random_range(-half..half))
}

fn occupancy_fuzz() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0cc0);
    let users = [UserId(1), UserId(2), UserId(3)];
    let mut w = WorldState::shared("fuzz");
    let (mut added, mut rejected, mut checks) = (0, 0, 0);
    for step in 1..=10_000u64 {
        let user = users[rng.random_range(0..users.len())];
        match rng.random_range(0..20) {
            0..11 => {
                let size = SIZES[rng.random_range(0..3)];
                let pos = random_cell(&mut rng, 12, 12);
                let clash = w.grid().blocks().any(|b| boxes_overlap(b.pos, b.size, pos, size));
                match w.apply_add(pos, size, Color::new(1, 2, 3), user, step) {
                    Ok(_) if !clash => added += 1,
                    Err(WorldError::Occupied { .. }) if clash => rejected += 1,
                    other => return Err(format!("step {step}: add at {pos:?} overlap={clash} gave {other:?}")),
                }
            }
            11..16 => {
                let ids: Vec<BlockId> = w.grid().blocks().map(|b| b.id).collect();
                let id = if ids.is_empty() || rng.random_bool(0.1) {
                    BlockId(rng.random_range(0..20_000))
                } else {
                    ids[rng.random_range(0..ids.len())]
                };
                let live = w.grid().contains(id);
                let res = w.apply_delete(id, user);
                ensure(res.is_ok() == live, || format!("step {step}: delete {id:?} live={live} gave {res:?}"))?;
            }
            _ => {
                w.apply_undo(user);
            }
        }
        if step % 100 == 0 {
            checks += 1;
            ensure(occupancy_matches(w.grid()), || format!("step {step}: index differs from the cell union"))?;
            let pairs = overlapping_pairs(w.grid());
            ensure(pairs.is_empty(), || format!("step {step}: overlapping {pairs:?}"))?;
        }
    }
    Ok(format!("10000 ops, {added} adds, {rejected} collisions refused, {checks} index checks, 0 overlaps"))
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

fn raycast_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x2a7);
    let (mut ground, mut blocks, mut misses) = (0, 0, 0);
    for scene in 0..10_000 {
        let mut grid = BlockGrid::new();
        let n = rng.random_range(0..=200);
        for i in 0..n {
            let size = SIZES[rng.random_range(0..3)];
            let block = Block {
                id: BlockId(i),
                pos: random_cell(&mut rng, 30, 20),
                size,
                color: Color::new(0, 0, 0),
                owner: UserId(1),
                seq: i + 1,
                created_at: 0,
            };
            let _ = grid.insert(block);
        }
        let origin = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(0.01..1.0), rng.random_range(-1.0..1.0));
        // most rays are aimed into the scene so that blocks get hit
        let direction = if rng.random_bool(0.7) {
            let target = Vector3::new(rng.random_range(-0.6..0.6), rng.random_range(0.0..0.4), rng.random_range(-0.6..0.6));
            (target - origin).try_normalize(1e-6).unwrap_or_else(|| random_unit(&mut rng))
        } else {
            random_unit(&mut rng)
        };
        let ray = Ray::new(origin, direction).map_err(|e| e.to_string())?;
        let got = raycast(&grid, &ray);
        let want = brute_force_raycast(&grid, &ray);
        let same = match (&got, &want) {
            (None, None) => {
                misses += 1;
                true
            }
            (Some(h), Some(OracleHit::Ground { distance })) => {
                ground += 1;
                matches!(h.kind, HitKind::Ground) && (h.distance - distance).abs() <= 1e-9
            }
            (Some(h), Some(OracleHit::Block { id, distance, .. })) => {
                blocks += 1;
                h.block().map(|b| b.id) == Some(*id) && (h.distance - distance).abs() <= 1e-9
            }
            _ => false,
        };
        ensure(same, || format!("scene {scene}: {got:?} vs oracle {want:?} for {ray:?}"))?;
    }
    Ok(format!("10000 scenes: {blocks} block hits, {ground} ground hits, {misses} misses"))
}

fn fuzz_outcomes(runs: u64, drop: f64) -> Result<Vec<SimOutcome>, String> {
    (0..runs)
        .map(|seed| run_scenario(&concurrent_schedule(seed, drop)).map_err(|e| format!("seed {seed}: {e}")))
        .collect()
}

fn records(log: &str) -> Result<Vec<LogRecord>, String> {
    parse_log(log).map_err(|e| e.to_string())
}

/// The server's final state, rebuilt from the run's log.
fn rebuild(out: &SimOutcome, spec: &WorldSpec) -> Result<WorldSequencer, String> {
    let fresh = WorldState::new(spec.id.clone(), WorldKind::Shared, spec.location.clone());
    let config = SequencerConfig { freshness_ms: spec.freshness_window_ms, ..SequencerConfig::default() };
    let mut seq = WorldSequencer::new(fresh, config);
    for rec in records(out.log())? {
        seq.replay(&rec).map_err(|e| format!("seq {}: {e}", rec.seq))?;
    }
    Ok(seq)
}

/// Sends two overlapping adds to a copy of `base` in the given order and
/// returns what each one got.
fn race(base: &WorldSequencer, first: (UserId, &ClientMsg), second: (UserId, &ClientMsg), now: u64) -> Result<[bool; 2], String> {
    let mut s = base.clone();
    let mut accepted = [false; 2];
    for (i, (user, cmd)) in [first, second].into_iter().enumerate() {
        match s.sequence_op(cmd, user, now) {
            Ok(Sequenced::Fresh(rec)) if rec.origin == user => accepted[i] = true,
            Err(r) if r.reason == RejectReason::Occupied => {}
            other => return Err(format!("{cmd:?} from {user:?} gave {other:?}")),
        }
    }
    Ok(accepted)
}

fn sequencer_correctness(runs: &[SimOutcome]) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5e9);
    let mut occupied = 0;
    let mut dropped = 0;
    let mut simulated = 0;
    let mut settled_clients = 0;
    for (seed, out) in runs.iter().enumerate() {
        ensure(out.converged(), || format!("seed {seed} did not converge: {:?}", out.problems))?;
        let sc = concurrent_schedule(seed as u64, 0.2);
        ensure(out.bots.len() == 4, || format!("seed {seed}: {} clients", out.bots.len()))?;
        let log = records(out.log())?;
        let spec = sc.world_spec();
        for b in &out.bots {
            let history = state_at(&log, &spec, b.seq)?;
            let blocks: Vec<Block> = history.grid().blocks().copied().collect();
            ensure(blocks == b.blocks, || format!("seed {seed}: {} at seq {} differs from the server's history", b.name, b.seq))?;
            ensure(!b.connected_at_end || (b.seq == out.settled_seq && b.blocks == out.server_blocks), || {
                format!("seed {seed}: {} settled at seq {}, server at {}", b.name, b.seq, out.settled_seq)
            })?;
        }
        let connected = out.bots.iter().filter(|b| b.connected_at_end).count();
        ensure(connected > 0, || format!("seed {seed}: no client was connected at the end"))?;
        settled_clients += connected;
        occupied += out.stats.rejects.get("occupied").copied().unwrap_or(0);
        dropped += out.stats.dropped;
        simulated += out.finished_at - sc.start_at;

        // both arrival orders of two overlapping adds, against the final state
        let mut base = rebuild(out, &spec)?;
        ensure(base.state() == &*final_state(out, &spec)?, || format!("seed {seed}: rebuilt state differs"))?;
        let now = out.finished_at + 1;
        let (a, b) = (out.bots[0].user, out.bots[1].user);
        for u in [a, b] {
            if !base.state().is_present(u) {
                base.join(u, now).map_err(|e| e.to_string())?;
            }
            if let LocationMode::Dependent { marker } = spec.location.clone() {
                let seen = ClientMsg::MarkerObserved { marker, pose: Pose::identity(), at: now };
                base.sequence_op(&seen, u, now).map_err(|r| r.detail)?;
            }
        }
        let size_a = SIZES[rng.random_range(0..3)];
        let size_b = SIZES[rng.random_range(0..3)];
        let pa = CellPos::new(10_000 + 8 * seed as i64, rng.random_range(0..4), rng.random_range(-4..4));
        let pb = CellPos::new(
            pa.x + rng.random_range(0..size_a.edge()),
            pa.y + rng.random_range(0..size_a.edge()),
            pa.z + rng.random_range(0..size_a.edge()),
        );
        ensure(boxes_overlap(pa, size_a, pb, size_b), || "test setup: boxes do not overlap".into())?;
        let add_a = ClientMsg::AddBlock { op: 1 << 40, pos: pa, size: size_a, rgb: Color::new(1, 0, 0) };
        let add_b = ClientMsg::AddBlock { op: 1 << 40, pos: pb, size: size_b, rgb: Color::new(0, 0, 1) };
        let ab = race(&base, (a, &add_a), (b, &add_b), now)?;
        let ba = race(&base, (b, &add_b), (a, &add_a), now)?;
        ensure(ab == [true, false] && ba == [true, false], || {
            format!("seed {seed}: orders gave {ab:?} and {ba:?}, expected first accepted, second refused")
        })?;
    }
    ensure(occupied > 0, || "no run exercised a cell collision".into())?;
    Ok(format!(
        "{} runs converged, {settled_clients} connected replicas equal the server ({} messages dropped, {occupied} live collisions refused, {:.1} h simulated); both orders of every race: 1 accept + 1 reject",
        runs.len(),
        dropped,
        simulated as f64 / 3.6e6
    ))
}

fn state_at(log: &[LogRecord], spec: &WorldSpec, seq: u64) -> Result<WorldState, String> {
    let mut w = WorldState::new(spec.id.clone(), WorldKind::Shared, spec.location.clone());
    for rec in log.iter().take_while(|r| r.seq <= seq) {
        w.apply_event(&rec.ev).map_err(|e| format!("seq {}: {e}", rec.seq))?;
    }
    Ok(w)
}

fn final_state(out: &SimOutcome, spec: &WorldSpec) -> Result<Box<WorldState>, String> {
    let store = MemStore::new();
    store.put(&spec.id, StoredWorld { snapshot: None, log: out.log().to_string() });
    let fresh = WorldState::new(spec.id.clone(), WorldKind::Shared, spec.location.clone());
    let config = SequencerConfig { freshness_ms: spec.freshness_window_ms, ..SequencerConfig::default() };
    let restored = blocks_server::restore(&mut store.clone(), fresh, config).map_err(|e| e.to_string())?;
    let state = restored.sequencer.state();
    ensure(state.seq() == out.server_seq, || format!("restored seq {} vs server {}", state.seq(), out.server_seq))?;
    let blocks: Vec<Block> = state.grid().blocks().copied().collect();
    ensure(blocks == out.server_blocks, || "restored blocks differ from the server's".into())?;
    Ok(Box::new(state.clone()))
}

struct Driver {
    hub: Hub,
    conns: Vec<ConnId>,
}

const USERS: [UserId; 3] = [UserId(0xa1), UserId(0xb2), UserId(0xc3)];

impl Driver {
    fn start(store: &MemStore, every: u64, now: u64) -> Result<Self, String> {
        let specs = vec![WorldSpec::independent("ourworld")];
        let config = HubConfig { snapshot_every: every, ..HubConfig::default() };
        let mut hub = Hub::new(Box::new(store.clone()), config, specs, now).map_err(|e| e.to_string())?.with_rng_seed(1);
        let conns = USERS
            .iter()
            .map(|u| {
                let c = hub.connect();
                hub.handle(c, ClientMsg::Hello { user: Some(*u) }, now);
                hub.handle(c, ClientMsg::JoinWorld { world: ourworld(), since: None }, now);
                c
            })
            .collect();
        Ok(Self { hub, conns })
    }

    /// One random command from a random client; `None` for a reconnect.
    fn step(&mut self, rng: &mut ChaCha8Rng, op: u64, now: u64) -> Option<(usize, ClientMsg)> {
        let i = rng.random_range(0..USERS.len());
        let msg = match rng.random_range(0..10) {
            0..5 => ClientMsg::AddBlock {
                op,
                pos: random_cell(rng, 6, 6),
                size: SIZES[rng.random_range(0..3)],
                rgb: Color::new(rng.random(), rng.random(), rng.random()),
            },
            5..7 => ClientMsg::DeleteBlock { op, block: BlockId(rng.random_range(0..op.max(1) + 30)) },
            7..9 => ClientMsg::Undo { op },
            _ => {
                self.hub.disconnect(self.conns[i], now);
                let c = self.hub.connect();
                self.hub.handle(c, ClientMsg::Hello { user: Some(USERS[i]) }, now);
                self.hub.handle(c, ClientMsg::JoinWorld { world: ourworld(), since: None }, now);
                self.conns[i] = c;
                return None;
            }
        };
        self.hub.handle(self.conns[i], msg.clone(), now);
        Some((i, msg))
    }

    fn live(&self) -> WorldState {
        self.hub.state(&ourworld()).expect("ourworld is open").clone()
    }
}

fn ourworld() -> blocks_core::WorldId {
    blocks_core::WorldId::new("ourworld")
}

/// Restores from `store` both with its snapshot and from the log alone, and
/// compares each with `live`.
fn restored_equals(store: &MemStore, live: &WorldState, what: &str) -> Result<(), String> {
    let with_snapshot = blocks_server::restore(&mut store.clone(), WorldState::shared("ourworld"), SequencerConfig::default())
        .map_err(|e| e.to_string())?;
    ensure(with_snapshot.corrupt.is_none() && !with_snapshot.snapshot_discarded, || format!("{what}: snapshot or log rejected"))?;
    ensure(with_snapshot.sequencer.state() == live, || format!("{what}: snapshot+replay differs from live state"))?;
    let mut bare = MemStore::new();
    bare.put(&ourworld(), StoredWorld { snapshot: None, log: store.world(&ourworld()).log });
    let replayed = blocks_server::restore(&mut bare, WorldState::shared("ourworld"), SequencerConfig::default())
        .map_err(|e| e.to_string())?;
    ensure(replayed.sequencer.state() == live, || format!("{what}: log-only replay differs from live state"))
}

fn replay_determinism() -> Check {
    let mut snapshots = 0;
    let mut resent = 0;
    for seed in 0..500u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let store = MemStore::new();
        let every = rng.random_range(1..40);
        let mut d = Driver::start(&store, every, 0)?;
        let steps = rng.random_range(1..300);
        let crash_at = rng.random_range(0..steps);
        let mut op = 0;
        let mut crashed_with = None;
        for t in 0..steps {
            op += 1;
            let seq = d.live().seq();
            let sent = d.step(&mut rng, op, t);
            if t == crash_at {
                // appended, then the process dies before anything is sent
                crashed_with = sent.map(|(i, msg)| (i, msg, d.live().seq() > seq));
                break;
            }
        }
        let live = d.live();
        drop(d);
        if store.world(&ourworld()).snapshot.is_some() {
            snapshots += 1;
        }
        restored_equals(&store, &live, &format!("seed {seed} after crash"))?;

        // the client never saw its ack, so it resends after the restart
        let now = steps + 1;
        let mut d = Driver::start(&store, every, now)?;
        if let Some((i, msg, accepted)) = crashed_with {
            let seq = d.live().seq();
            let out = d.hub.handle(d.conns[i], msg.clone(), now);
            ensure(d.live().seq() == seq, || format!("seed {seed}: resent {msg:?} changed the world"))?;
            let acked = out.iter().any(|o| {
                matches!(o, Outgoing::Send(c, ServerMsg::Event { record, .. }) if *c == d.conns[i] && record.op == msg.op_id())
            });
            ensure(acked == accepted, || format!("seed {seed}: resent {msg:?} acked={acked}, originally accepted={accepted}"))?;
            resent += 1;
        }
        for t in 0..rng.random_range(0..100u64) {
            op += 1;
            d.step(&mut rng, op, now + t);
        }
        let live = d.live();
        drop(d);
        restored_equals(&store, &live, &format!("seed {seed} after restart"))?;
    }
    Ok(format!("500 logs, {snapshots} with snapshots at the crash, {resent} lost acks resent"))
}

fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
    let q = Vector4::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::from_vector(q));
    let t = Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
    Pose::from_quaternion(q, t, rng.random_range(0.5..2.0)).expect("random pose is valid")
}

fn anchor_invariance() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xa11c);
    let mut worst: f64 = 0.0;
    for i in 0..10_000 {
        let (old, new) = (random_pose(&mut rng), random_pose(&mut rng));
        let m = Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        let p = from_marker_frame(&old, &m);
        let moved = rebase(&old, &new, &p);
        let errs = [
            (to_marker_frame(&new, &moved) - m).norm(),
            (to_marker_by_matrix(&new, &moved) - m).norm(),
            (to_marker_by_matrix(&old, &p) - m).norm(),
            (from_marker_frame(&old, &to_marker_frame(&old, &p)) - p).norm(),
            (to_marker_frame(&new, &from_marker_frame(&new, &m)) - m).norm(),
        ];
        let e = errs.iter().copied().fold(0.0, f64::max);
        worst = worst.max(e);
        ensure(e <= 1e-9, || format!("pair {i}: error {e:e} ({errs:?})"))?;
    }
    Ok(format!("10000 pose pairs, worst error {worst:.1e} m"))
}

fn analytics_closure(fuzzed: &[SimOutcome]) -> Check {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../sim/fixtures/field-day-1.json");
    let sc = Scenario::load(std::path::Path::new(path)).map_err(|e| e.to_string())?;
    let out = run_scenario(&sc).map_err(|e| e.to_string())?;
    ensure(out.converged(), || format!("field-day-1 did not converge: {:?}", out.problems))?;
    let truth = out.truth_report();
    let summary = summarize(&records(out.log())?, sc.sync_window_ms).map_err(|e| e.to_string())?;
    ensure(summary.report == truth, || format!("field-day-1: analytics {:?} vs truth {truth:?}", summary.report))?;
    let truth_json = serde_json::to_value(truth).map_err(|e| e.to_string())?;
    for (k, want) in &sc.expect {
        ensure(truth_json.get(k) == Some(want), || format!("field-day-1: {k} is {:?}, script says {want}", truth_json.get(k)))?;
    }

    for out in fuzzed {
        let s = summarize(&records(out.log())?, out.sync_window_ms).map_err(|e| e.to_string())?;
        let r = &s.report;
        let in_moments: u64 = s.sync_moments.iter().map(|m| m.blocks_added).sum();
        ensure(r.sync_blocks + r.async_blocks == r.blocks_added && in_moments == r.sync_blocks, || {
            format!("{}: sync {} + async {} vs added {}, moments hold {in_moments}", out.scenario, r.sync_blocks, r.async_blocks, r.blocks_added)
        })?;
        ensure(*r == out.truth_report(), || format!("{}: analytics {r:?} vs truth {:?}", out.scenario, out.truth_report()))?;
    }
    Ok(format!(
        "field-day-1 matches its {} scripted counters and ground truth on all 13 fields; partition holds on {} fuzzed logs",
        sc.expect.len(),
        fuzzed.len()
    ))
}

fn undo_contract() -> Check {
    let (a, b) = (UserId(1), UserId(2));
    let at = |x| CellPos::new(x, 0, 0);
    let grey = Color::new(128, 128, 128);

    // A adds b1; B deletes b1; A adds b2; A undoes -> b2; A undoes again -> nothing
    let mut w = WorldState::shared("undo");
    let b1 = w.apply_add(at(0), SizeClass::Small, grey, a, 1).map_err(|e| e.to_string())?;
    w.apply_delete(b1.id, b).map_err(|e| e.to_string())?;
    let b2 = w.apply_add(at(4), SizeClass::Small, grey, a, 3).map_err(|e| e.to_string())?;
    let first = w.apply_undo(a).map(|blk| blk.id);
    let seq = w.seq();
    let second = w.apply_undo(a);
    ensure(first == Some(b2.id), || format!("first undo removed {first:?}, expected {:?}", b2.id))?;
    ensure(second.is_none() && w.seq() == seq && w.grid().is_empty(), || format!("second undo gave {second:?}"))?;

    // skip-dead-entries: undo removes the user's newest live block
    let mut rng = ChaCha8Rng::seed_from_u64(0x0d0);
    let users = [a, b, UserId(3)];
    let mut undos = 0;
    for case in 0..1_000 {
        let mut w = WorldState::shared("undo");
        for t in 0..rng.random_range(0..80u64) {
            let u = users[rng.random_range(0..3)];
            match rng.random_range(0..10) {
                0..6 => {
                    let _ = w.apply_add(random_cell(&mut rng, 8, 4), SIZES[rng.random_range(0..3)], grey, u, t);
                }
                6..8 => {
                    let ids: Vec<BlockId> = w.grid().blocks().map(|blk| blk.id).collect();
                    if !ids.is_empty() {
                        let id = ids[rng.random_range(0..ids.len())];
                        w.apply_delete(id, u).map_err(|e| e.to_string())?;
                    }
                }
                _ => {
                    // ids only grow, so the newest live block of u has the largest id
                    let expected = w.grid().blocks().filter(|blk| blk.owner == u).map(|blk| blk.id).max();
                    let got = w.apply_undo(u).map(|blk| blk.id);
                    ensure(got == expected, || format!("case {case}: undo by {u:?} removed {got:?}, expected {expected:?}"))?;
                    undos += 1;
                }
            }
        }

        // add then undo leaves the block map as it was
        let before: BTreeMap<BlockId, Block> = w.grid().block_map().clone();
        let u = users[rng.random_range(0..3)];
        let size = SIZES[rng.random_range(0..3)];
        let pos = loop {
            let p = random_cell(&mut rng, 12, 8);
            if !before.values().any(|blk| boxes_overlap(blk.pos, blk.size, p, size)) {
                break p;
            }
        };
        let added = w.apply_add(pos, size, grey, u, 1_000).map_err(|e| format!("case {case}: {e}"))?;
        let undone = w.apply_undo(u).map(|blk| blk.id);
        ensure(undone == Some(added.id), || format!("case {case}: undo removed {undone:?}, not the new block"))?;
        ensure(w.grid().block_map() == &before, || format!("case {case}: block map changed by add then undo"))?;
    }
    Ok(format!("three-step example holds; {undos} random undos hit the newest live block; add then undo is identity on 1000 states"))
}
