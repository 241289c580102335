//! The script's own counters, kept by the harness as messages reach the
//! server. They never look at the server's log, so analytics run on that log
//! can be checked against them.

use std::collections::{BTreeMap, BTreeSet};

use blocks_analytics::report::{average, minutes};
use blocks_analytics::Report;
use blocks_core::{Millis, UserId};
use serde::{Deserialize, Serialize};

/// Field names of [`Report`], as they appear in JSON.
pub const REPORT_FIELDS: [&str; 13] = [
    "users",
    "user_sessions",
    "users_with_gt1_session",
    "sessions_with_blocks",
    "avg_blocks_per_session",
    "avg_time_per_session_min",
    "blocks_added",
    "blocks_deleted",
    "deletion_by_others",
    "sync_moments",
    "sync_blocks",
    "async_sessions",
    "async_blocks",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthSession {
    pub user: UserId,
    pub start: Millis,
    pub end: Option<Millis>,
    /// Times of this session's accepted adds.
    pub adds: Vec<Millis>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub sessions: Vec<TruthSession>,
    pub deletes: u64,
    pub deletions_by_others: u64,
    pub undos: u64,
    pub contributions: BTreeMap<UserId, u64>,
    /// Open connections per user, as the server counts them.
    #[serde(skip)]
    present: BTreeMap<UserId, (usize, usize)>,
}

impl GroundTruth {
    /// A connection of `user` was joined to the world.
    pub fn join(&mut self, user: UserId, at: Millis) {
        let open = self.sessions.len();
        let entry = self.present.entry(user).or_insert((0, open));
        if entry.0 == 0 {
            entry.1 = open;
            self.sessions.push(TruthSession { user, start: at, end: None, adds: Vec::new() });
        }
        entry.0 += 1;
    }

    /// A joined connection of `user` went away.
    pub fn leave(&mut self, user: UserId, at: Millis) {
        let entry = self.present.get_mut(&user).expect("leave follows join");
        entry.0 -= 1;
        if entry.0 == 0 {
            self.sessions[entry.1].end = Some(at);
        }
    }

    pub fn added(&mut self, user: UserId, at: Millis) {
        let &(n, idx) = self.present.get(&user).expect("adds happen inside a session");
        assert!(n > 0, "adds happen inside a session");
        self.sessions[idx].adds.push(at);
        *self.contributions.entry(user).or_default() += 1;
    }

    pub fn deleted(&mut self, by: UserId, owner: UserId) {
        self.deletes += 1;
        if by != owner {
            self.deletions_by_others += 1;
        }
    }

    pub fn undone(&mut self) {
        self.undos += 1;
    }

    pub fn blocks_added(&self) -> u64 {
        self.contributions.values().sum()
    }

    /// Every report field, computed directly: sync moments by comparing
    /// every pair of adds.
    pub fn report(&self, sync_window_ms: Millis) -> Report {
        let mut adds: Vec<(Millis, UserId)> =
            self.sessions.iter().flat_map(|s| s.adds.iter().map(move |t| (*t, s.user))).collect();
        adds.sort();
        let mut pairs = Vec::new();
        for (i, (ta, ua)) in adds.iter().enumerate() {
            for (tb, ub) in &adds[i + 1..] {
                if ua != ub && tb - ta <= sync_window_ms {
                    pairs.push((*ta, *tb));
                }
            }
        }
        pairs.sort();
        let mut moments: Vec<(Millis, Millis)> = Vec::new();
        for (s, e) in pairs {
            match moments.last_mut() {
                Some(m) if s <= m.1 => m.1 = m.1.max(e),
                _ => moments.push((s, e)),
            }
        }
        let synchronous = |t: &Millis| moments.iter().any(|(s, e)| s <= t && t <= e);

        let with_blocks: Vec<&TruthSession> = self.sessions.iter().filter(|s| !s.adds.is_empty()).collect();
        let n = with_blocks.len() as u64;
        let in_sessions: u64 = with_blocks.iter().map(|s| s.adds.len() as u64).sum();
        let time: Millis = with_blocks.iter().filter_map(|s| s.end.map(|e| e - s.start)).sum();
        let mut per_user: BTreeMap<UserId, u64> = BTreeMap::new();
        for s in &self.sessions {
            *per_user.entry(s.user).or_default() += 1;
        }
        let blocks_added = adds.len() as u64;
        let sync_blocks = adds.iter().filter(|(t, _)| synchronous(t)).count() as u64;
        Report {
            users: self.sessions.iter().map(|s| s.user).collect::<BTreeSet<_>>().len() as u64,
            user_sessions: self.sessions.len() as u64,
            users_with_gt1_session: per_user.values().filter(|n| **n > 1).count() as u64,
            sessions_with_blocks: n,
            avg_blocks_per_session: average(in_sessions, n),
            avg_time_per_session_min: minutes(average(time, n)),
            blocks_added,
            blocks_deleted: self.deletes + self.undos,
            deletion_by_others: self.deletions_by_others,
            sync_moments: moments.len() as u64,
            sync_blocks,
            async_sessions: with_blocks.iter().filter(|s| !s.adds.iter().any(synchronous)).count() as u64,
            async_blocks: blocks_added - sync_blocks,
        }
    }
}
