use std::collections::BTreeSet;

use blocks_analytics::sync::{moments_from_adds, user_adds, AddAt};
use blocks_analytics::{detect_sync_moments, participation_balance, summarize};
use blocks_core::{Block, BlockId, CellPos, Color, Millis, SizeClass, UserId, WorldEvent};
use blocks_protocol::LogRecord;
use proptest::prelude::*;

/// Union of `[t_a, t_b]` over every pair of adds by different users at most
/// `window` apart, merged where intervals overlap or touch.
fn all_pairs_moments(adds: &[AddAt], window: Millis) -> Vec<(Millis, Millis)> {
    let mut intervals = Vec::new();
    for (i, a) in adds.iter().enumerate() {
        for b in &adds[i + 1..] {
            let (lo, hi) = (a.at.min(b.at), a.at.max(b.at));
            if a.user != b.user && hi - lo <= window {
                intervals.push((lo, hi));
            }
        }
    }
    intervals.sort();
    let mut merged: Vec<(Millis, Millis)> = Vec::new();
    for (s, e) in intervals {
        match merged.last_mut() {
            Some(m) if s <= m.1 => m.1 = m.1.max(e),
            _ => merged.push((s, e)),
        }
    }
    merged
}

fn block(id: u64, owner: UserId, color: u8) -> Block {
    Block {
        id: BlockId(id),
        pos: CellPos::new(id as i64 * 4, 0, 0),
        size: SizeClass::Small,
        color: Color::new(color, 0, 0),
        owner,
        seq: 0,
        created_at: 0,
    }
}

/// A valid log: each user runs back-to-back sessions, adding at the given
/// offsets, with a few deletions (some of other users' blocks).
fn log_from(plan: &[(u8, Vec<(Millis, Vec<Millis>)>)], deletes: &[(u8, usize)]) -> Vec<LogRecord> {
    let mut timeline: Vec<(Millis, u8, WorldEvent)> = Vec::new();
    let mut next_id = 1;
    let mut blocks: Vec<Block> = Vec::new();
    for (u, sessions) in plan {
        let user = UserId(*u as u128 + 1);
        let mut t = 0;
        for (gap, adds) in sessions {
            let start = t + gap + 1;
            timeline.push((start, 0, WorldEvent::Joined { user }));
            let mut last = start;
            for (k, off) in adds.iter().enumerate() {
                last = start + off;
                let b = block(next_id, user, (k % 3) as u8);
                next_id += 1;
                blocks.push(b);
                timeline.push((last, 1, WorldEvent::Added { block: b }));
            }
            t = last + 1_000;
            timeline.push((t, 3, WorldEvent::Left { user }));
        }
    }
    timeline.sort_by_key(|(t, order, _)| (*t, *order));
    let end = timeline.last().map_or(0, |e| e.0);
    for (u, pick) in deletes {
        if blocks.is_empty() {
            break;
        }
        let b = blocks.remove(pick % blocks.len());
        let by = UserId(*u as u128 + 1);
        timeline.push((end + 1, 2, WorldEvent::Deleted { block: b, by, by_other: by != b.owner }));
    }
    timeline
        .into_iter()
        .enumerate()
        .map(|(i, (at, _, ev))| LogRecord { seq: i as u64 + 1, at, origin: ev.actor(), op: None, ev })
        .collect()
}

fn plan() -> impl Strategy<Value = Vec<(u8, Vec<(Millis, Vec<Millis>)>)>> {
    let session = (0u64..200_000, prop::collection::btree_set(0u64..300_000, 0..8))
        .prop_map(|(gap, adds)| (gap, adds.into_iter().collect::<Vec<_>>()));
    prop::collection::vec(prop::collection::vec(session, 1..4), 1..5)
        .prop_map(|users| users.into_iter().enumerate().map(|(i, s)| (i as u8, s)).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn sync_moments_match_all_pairs_oracle(
        raw in prop::collection::vec((0u64..2_000, 0u8..4), 0..80),
        window in 0u64..300,
    ) {
        let mut adds: Vec<AddAt> = raw.iter().map(|(t, u)| AddAt { at: *t, user: UserId(*u as u128 + 1) }).collect();
        adds.sort_by_key(|a| a.at);
        let got = moments_from_adds(&adds, window);
        let want = all_pairs_moments(&adds, window);
        prop_assert_eq!(got.iter().map(|m| (m.start, m.end)).collect::<Vec<_>>(), want.clone());
        for m in &got {
            let inside: Vec<&AddAt> = adds.iter().filter(|a| (m.start..=m.end).contains(&a.at)).collect();
            prop_assert_eq!(m.blocks_added, inside.len() as u64);
            prop_assert!(m.users.len() >= 2);
            prop_assert_eq!(&m.users, &inside.iter().map(|a| a.user).collect::<BTreeSet<_>>());
        }
        // maximality: nothing simultaneous straddles two neighbouring moments
        for pair in got.windows(2) {
            for a in adds.iter().filter(|a| a.at <= pair[0].end) {
                for b in adds.iter().filter(|b| b.at >= pair[1].start) {
                    prop_assert!(a.user == b.user || b.at - a.at > window);
                }
            }
        }
    }

    #[test]
    fn sync_and_async_blocks_partition_the_adds(plan in plan(), deletes in prop::collection::vec((0u8..5, any::<usize>()), 0..5),
                                                window in 0u64..120_000) {
        let log = log_from(&plan, &deletes);
        let s = summarize(&log, window).unwrap();
        let r = s.report;
        prop_assert_eq!(r.sync_blocks + r.async_blocks, r.blocks_added);
        prop_assert_eq!(r.blocks_added, user_adds(&log).len() as u64);
        prop_assert_eq!(r.user_sessions, plan.iter().map(|(_, s)| s.len() as u64).sum::<u64>());
        prop_assert!(r.async_sessions <= r.sessions_with_blocks);
        let moments = detect_sync_moments(&log, window);
        prop_assert_eq!(r.sync_moments, moments.len() as u64);
        let expected_by_others = log.iter().filter(|rec| matches!(&rec.ev, WorldEvent::Deleted { block, by, .. } if *by != block.owner)).count() as u64;
        prop_assert_eq!(r.deletion_by_others, expected_by_others);
    }

    #[test]
    fn two_person_balance_is_between_half_and_one(p in 0.0f64..=1.0) {
        let b = participation_balance(&[p, 1.0 - p]).unwrap();
        prop_assert!((0.5 - 1e-12..=1.0 + 1e-12).contains(&b));
        // closed form for a pair: 1 - (2p - 1)^2 / 2
        prop_assert!((b - (1.0 - (2.0 * p - 1.0).powi(2) / 2.0)).abs() < 1e-12);
    }
}

#[test]
fn balance_is_one_only_for_an_even_split() {
    assert_eq!(participation_balance(&[0.5, 0.5]).unwrap(), 1.0);
    assert!(participation_balance(&[0.5 + 1e-6, 0.5 - 1e-6]).unwrap() < 1.0);
}

#[test]
fn six_synchronous_adds_out_of_twenty() {
    // A adds 14 blocks alone over two hours; later A and B add 3 each within a minute
    let mut plan = vec![(0u8, vec![(0, (0..14).map(|i| i * 600_000).collect())])];
    // first session leaves at 7_801_000; the second starts at 9_000_000
    plan[0].1.push((1_198_999, (0..3).map(|i| i * 10_000).collect()));
    plan.push((1, vec![(8_999_999, (0..3).map(|i| i * 10_000 + 5_000).collect())]));
    let log = log_from(&plan, &[]);
    let r = summarize(&log, 60_000).unwrap().report;
    assert_eq!(r.blocks_added, 20);
    assert_eq!(r.sync_moments, 1);
    assert_eq!(r.sync_blocks, 6);
    assert_eq!(r.async_blocks, 14);
}
