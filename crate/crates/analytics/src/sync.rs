//! Synchronous moments: stretches where two or more people add blocks at
//! about the same time.
//!
//! Two adds by different users whose times differ by at most `window_ms` are
//! simultaneous; the pair spans the interval between them. Moments are the
//! unions of overlapping (or touching) pair intervals.

use std::collections::BTreeSet;

use blocks_core::{Millis, UserId, WorldEvent};
use blocks_protocol::LogRecord;
use serde::{Deserialize, Serialize};

pub const DEFAULT_SYNC_WINDOW_MS: Millis = 60_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AddAt {
    pub at: Millis,
    pub user: UserId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncMoment {
    pub start: Millis,
    pub end: Millis,
    pub users: BTreeSet<UserId>,
    /// Every add, by anyone, inside `[start, end]`.
    pub blocks_added: u64,
}

/// User adds in time order, skipping the system user's blocks.
pub fn user_adds(log: &[LogRecord]) -> Vec<AddAt> {
    let mut adds: Vec<AddAt> = log
        .iter()
        .filter_map(|r| match &r.ev {
            WorldEvent::Added { block } if !block.owner.is_system() => Some(AddAt { at: r.at, user: block.owner }),
            _ => None,
        })
        .collect();
    adds.sort_by_key(|a| a.at);
    adds
}

pub fn detect_sync_moments(log: &[LogRecord], window_ms: Millis) -> Vec<SyncMoment> {
    moments_from_adds(&user_adds(log), window_ms)
}

/// `adds` must be sorted by time.
pub fn moments_from_adds(adds: &[AddAt], window_ms: Millis) -> Vec<SyncMoment> {
    let n = adds.len();
    // next_diff[i]: first index after i whose user differs from adds[i].user
    let mut next_diff = vec![n; n];
    for i in (0..n.saturating_sub(1)).rev() {
        next_diff[i] = if adds[i + 1].user != adds[i].user { i + 1 } else { next_diff[i + 1] };
    }
    // For each add, the widest pair interval ending at it starts at the
    // earliest add by someone else still inside the window.
    let mut intervals: Vec<(Millis, Millis)> = Vec::new();
    let mut lo = 0;
    for i in 0..n {
        while adds[i].at - adds[lo].at > window_ms {
            lo += 1;
        }
        let partner = if adds[lo].user != adds[i].user { lo } else { next_diff[lo] };
        if partner < i {
            intervals.push((adds[partner].at, adds[i].at));
        }
    }
    // merge in order of start
    intervals.sort();
    let mut merged: Vec<(Millis, Millis)> = Vec::new();
    for (s, e) in intervals {
        match merged.last_mut() {
            Some(last) if s <= last.1 => last.1 = last.1.max(e),
            _ => merged.push((s, e)),
        }
    }
    merged
        .into_iter()
        .map(|(start, end)| {
            let inside = adds.iter().filter(|a| (start..=end).contains(&a.at));
            let (users, count) = inside.fold((BTreeSet::new(), 0u64), |(mut us, c), a| {
                us.insert(a.user);
                (us, c + 1)
            });
            SyncMoment { start, end, users, blocks_added: count }
        })
        .collect()
}

pub fn in_any_moment(moments: &[SyncMoment], at: Millis) -> bool {
    let i = moments.partition_point(|m| m.end < at);
    moments.get(i).is_some_and(|m| m.start <= at)
}
