use blocks_core::anchor::{from_marker_frame, rebase, to_marker_frame};
use blocks_core::oracles::{brute_force_raycast, occupancy_matches, overlapping_pairs, to_marker_by_matrix, OracleHit};
use blocks_core::placement::{line_extension, place_from_hit, raycast};
use blocks_core::{
    BlockId, CellPos, Color, Face, HitKind, Pose, Ray, SizeClass, UserId, WorldEvent, WorldState,
};
use nalgebra::{UnitQuaternion, Vector3};
use proptest::prelude::*;

#[derive(Debug, Clone)]
enum Op {
    Add { user: u8, pos: (i64, i64, i64), size: SizeClass },
    Delete { user: u8, pick: usize },
    Undo { user: u8 },
}

fn size() -> impl Strategy<Value = SizeClass> {
    prop_oneof![Just(SizeClass::Small), Just(SizeClass::Medium), Just(SizeClass::Large)]
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        5 => (0u8..3, (-6i64..6, -1i64..6, -6i64..6), size())
            .prop_map(|(user, pos, size)| Op::Add { user, pos, size }),
        2 => (0u8..3, any::<usize>()).prop_map(|(user, pick)| Op::Delete { user, pick }),
        2 => (0u8..3).prop_map(|user| Op::Undo { user }),
    ]
}

fn user(n: u8) -> UserId {
    UserId(100 + n as u128)
}

/// Runs ops, returning every successful event.
fn run(world: &mut WorldState, ops: &[Op]) -> Vec<WorldEvent> {
    let mut events = Vec::new();
    for (t, op) in ops.iter().enumerate() {
        let before = world.counters();
        match op {
            Op::Add { user: u, pos, size } => {
                let p = CellPos::new(pos.0, pos.1, pos.2);
                if let Ok(block) = world.apply_add(p, *size, Color::new(*u, 0, 0), user(*u), t as u64) {
                    events.push(WorldEvent::Added { block });
                }
            }
            Op::Delete { user: u, pick } => {
                let ids: Vec<BlockId> = world.grid().blocks().map(|b| b.id).collect();
                if !ids.is_empty() {
                    let rec = world.apply_delete(ids[pick % ids.len()], user(*u)).unwrap();
                    events.push(WorldEvent::Deleted { block: rec.block, by: user(*u), by_other: rec.was_by_other });
                }
            }
            Op::Undo { user: u } => {
                if let Some(block) = world.apply_undo(user(*u)) {
                    events.push(WorldEvent::Undone { user: user(*u), block });
                }
            }
        }
        let after = world.counters();
        assert!(after.total_adds >= before.total_adds);
        assert!(after.total_deletes >= before.total_deletes);
        assert!(after.deletes_by_others >= before.deletes_by_others);
    }
    events
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn occupancy_is_exact_and_blocks_never_overlap(ops in prop::collection::vec(op(), 1..120)) {
        let mut w = WorldState::shared("w");
        run(&mut w, &ops);
        prop_assert!(occupancy_matches(w.grid()));
        prop_assert!(overlapping_pairs(w.grid()).is_empty());
    }

    #[test]
    fn add_then_undo_restores_block_map(ops in prop::collection::vec(op(), 0..60),
                                        u in 0u8..3, pos in (-8i64..8, 0i64..8, -8i64..8), s in size()) {
        let mut w = WorldState::shared("w");
        run(&mut w, &ops);
        let before = w.grid().clone();
        if w.apply_add(CellPos::new(pos.0, pos.1, pos.2), s, Color::new(1, 2, 3), user(u), 0).is_ok() {
            prop_assert!(w.apply_undo(user(u)).is_some());
            prop_assert_eq!(w.grid(), &before);
        }
    }

    #[test]
    fn replaying_events_reproduces_state(ops in prop::collection::vec(op(), 0..120)) {
        let mut live = WorldState::shared("w");
        let events = run(&mut live, &ops);
        let mut replayed = WorldState::shared("w");
        for e in &events {
            replayed.apply_event(e).unwrap();
        }
        prop_assert_eq!(&replayed, &live);
        let by_others = events.iter().filter(|e| matches!(e,
            WorldEvent::Deleted { block, by, .. } if *by != block.owner)).count() as u64;
        prop_assert_eq!(live.counters().deletes_by_others, by_others);
    }

    #[test]
    fn face_placement_never_overlaps_hit_block(bx in -5i64..5, by in 0i64..5, bz in -5i64..5,
                                              bs in size(), ns in size(),
                                              ox in -1.0f64..1.0, oy in -1.0f64..1.0, oz in -1.0f64..1.0,
                                              tx in 0.0f64..1.0, ty in 0.0f64..1.0, tz in 0.0f64..1.0) {
        let mut w = WorldState::shared("w");
        let b = w.apply_add(CellPos::new(bx, by, bz), bs, Color::new(0, 0, 0), user(0), 0).unwrap();
        let target = Vector3::new(bx as f64 + tx * bs.edge() as f64, by as f64 + ty * bs.edge() as f64,
                                  bz as f64 + tz * bs.edge() as f64) * 0.02;
        let origin = target + Vector3::new(ox, oy, oz);
        let Ok(ray) = Ray::towards(origin, target - origin) else { return Ok(()) };
        if let Some(hit) = raycast(w.grid(), &ray) {
            if let HitKind::BlockFace { block, .. } = hit.kind {
                prop_assert_eq!(block.id, b.id);
                let pos = place_from_hit(&hit, ns);
                let new_cells: Vec<_> = blocks_core::types::cells_of(pos, ns).collect();
                prop_assert!(b.cells().all(|c| !new_cells.contains(&c)));
            }
        }
    }

    #[test]
    fn line_extension_stride(ax in -20i64..20, ay in 0i64..20, az in -20i64..20, s in size(),
                             count in 1i64..12, face in 0usize..6) {
        let face = Face::from_axis(face / 2, face % 2 == 0);
        let line = line_extension(CellPos::new(ax, ay, az), face, s, count).unwrap();
        prop_assert_eq!(line.len() as i64, count);
        for w in line.windows(2) {
            let step = face.step();
            prop_assert_eq!(w[1], w[0].offset(step.x * s.edge(), step.y * s.edge(), step.z * s.edge()));
        }
    }

    #[test]
    fn raycast_matches_brute_force(blocks in prop::collection::vec(((-10i64..10, 0i64..8, -10i64..10), size()), 0..40),
                                   o in prop::array::uniform3(-0.4f64..0.4), oy in 0.0f64..0.5,
                                   d in prop::array::uniform3(-1.0f64..1.0)) {
        let mut w = WorldState::shared("w");
        for (p, s) in blocks {
            let _ = w.apply_add(CellPos::new(p.0, p.1, p.2), s, Color::new(0, 0, 0), user(0), 0);
        }
        let Ok(ray) = Ray::towards(Vector3::new(o[0], oy, o[2]), Vector3::from(d)) else { return Ok(()) };
        let got = raycast(w.grid(), &ray);
        let want = brute_force_raycast(w.grid(), &ray);
        match (got, want) {
            (None, None) => {}
            (Some(h), Some(OracleHit::Ground { distance })) => {
                prop_assert_eq!(h.kind, HitKind::Ground);
                prop_assert!((h.distance - distance).abs() <= 1e-9);
            }
            (Some(h), Some(OracleHit::Block { id, face, distance })) => {
                match h.kind {
                    HitKind::BlockFace { block, face: f } => {
                        prop_assert_eq!(block.id, id);
                        prop_assert_eq!(f, face);
                    }
                    HitKind::Ground => prop_assert!(false, "expected block {id}"),
                }
                prop_assert!((h.distance - distance).abs() <= 1e-9);
            }
            (g, w) => prop_assert!(false, "raycast {g:?} vs oracle {w:?}"),
        }
    }

    #[test]
    fn frame_round_trips(q in prop::array::uniform4(-1.0f64..1.0), t in prop::array::uniform3(-5.0f64..5.0),
                         s in 0.05f64..20.0, p in prop::array::uniform3(-5.0f64..5.0)) {
        let quat = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[0] + 1e-3, q[1], q[2], q[3]));
        let pose = Pose::from_quaternion(quat, Vector3::from(t), s).unwrap();
        let p = Vector3::from(p);
        prop_assert!((from_marker_frame(&pose, &to_marker_frame(&pose, &p)) - p).amax() <= 1e-9);
        prop_assert!((to_marker_frame(&pose, &from_marker_frame(&pose, &p)) - p).amax() <= 1e-9);
        prop_assert!((to_marker_frame(&pose, &p) - to_marker_by_matrix(&pose, &p)).amax() <= 1e-9);
    }

    #[test]
    fn rebase_keeps_marker_coordinates(q1 in prop::array::uniform4(-1.0f64..1.0), q2 in prop::array::uniform4(-1.0f64..1.0),
                                       t1 in prop::array::uniform3(-5.0f64..5.0), t2 in prop::array::uniform3(-5.0f64..5.0),
                                       s1 in 0.1f64..10.0, s2 in 0.1f64..10.0, p in prop::array::uniform3(-5.0f64..5.0)) {
        let mk = |q: [f64; 4], t: [f64; 3], s: f64| {
            Pose::from_quaternion(UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[0] + 1e-3, q[1], q[2], q[3])), Vector3::from(t), s).unwrap()
        };
        let (old, new) = (mk(q1, t1, s1), mk(q2, t2, s2));
        let p = Vector3::from(p);
        let moved = rebase(&old, &new, &p);
        prop_assert!((to_marker_frame(&new, &moved) - to_marker_frame(&old, &p)).amax() <= 1e-9);
    }
}

#[test]
fn top_down_stacking_builds_gapless_tower() {
    let mut w = WorldState::shared("w");
    let ray = Ray::new(Vector3::new(0.03, 5.0, 0.05), Vector3::new(0.0, -1.0, 0.0)).unwrap();
    let mut tops = Vec::new();
    for i in 0..30 {
        let size = SizeClass::ALL[i % 3];
        let hit = raycast(w.grid(), &ray).unwrap();
        let pos = place_from_hit(&hit, size);
        let b = w.apply_add(pos, size, Color::new(0, 0, 0), user(0), i as u64).unwrap();
        tops.push((b.pos.y, b.pos.y + size.edge()));
    }
    assert_eq!(tops[0].0, 0);
    for pair in tops.windows(2) {
        assert_eq!(pair[1].0, pair[0].1, "gap or overlap in tower: {tops:?}");
    }
}
