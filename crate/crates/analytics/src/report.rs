//! The summary table: one row per collaboration metric.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use blocks_core::{Millis, UserId, WorldEvent};
use blocks_protocol::LogRecord;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::balance::{fractions, participation_balance};
use crate::sessions::{segment_sessions, MalformedLog, Session};
use crate::sync::{detect_sync_moments, in_any_moment, SyncMoment};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub users: u64,
    pub user_sessions: u64,
    pub users_with_gt1_session: u64,
    pub sessions_with_blocks: u64,
    pub avg_blocks_per_session: f64,
    pub avg_time_per_session_min: f64,
    pub blocks_added: u64,
    pub blocks_deleted: u64,
    pub deletion_by_others: u64,
    pub sync_moments: u64,
    pub sync_blocks: u64,
    pub async_sessions: u64,
    pub async_blocks: u64,
}

/// Averages as reported: totals divided once, so any two computations from
/// the same integers agree exactly.
pub fn average(total: u64, count: u64) -> f64 {
    if count == 0 {
        0.0
    } else {
        total as f64 / count as f64
    }
}

pub fn minutes(ms: f64) -> f64 {
    ms / 60_000.0
}

impl Report {
    pub const ROW_LABELS: [&'static str; 13] = [
        "Users",
        "User sessions",
        "Users with >1 session",
        "Sessions with blocks added",
        "Avg blocks per session",
        "Avg time per session (min)",
        "Blocks added",
        "Blocks deleted",
        "Deletion by others",
        "Synchronous moments",
        "Sync: blocks added",
        "Asynchronous sessions",
        "Async: blocks added",
    ];

    pub fn rows(&self) -> Vec<(&'static str, String)> {
        let values = [
            self.users.to_string(),
            self.user_sessions.to_string(),
            self.users_with_gt1_session.to_string(),
            self.sessions_with_blocks.to_string(),
            format!("{:.2}", self.avg_blocks_per_session),
            format!("{:.2}", self.avg_time_per_session_min),
            self.blocks_added.to_string(),
            self.blocks_deleted.to_string(),
            self.deletion_by_others.to_string(),
            self.sync_moments.to_string(),
            self.sync_blocks.to_string(),
            self.async_sessions.to_string(),
            self.async_blocks.to_string(),
        ];
        Self::ROW_LABELS.into_iter().zip(values).collect()
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows = self.rows();
        let lw = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0);
        let vw = rows.iter().map(|(_, v)| v.len()).max().unwrap_or(0);
        for (label, value) in rows {
            writeln!(f, "{label:<lw$}  {value:>vw$}")?;
        }
        Ok(())
    }
}

/// Report plus the per-session and per-user detail behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub report: Report,
    pub sync_window_ms: Millis,
    pub sessions: Vec<Session>,
    pub sync_moments: Vec<SyncMoment>,
    /// Blocks added per user.
    pub contributions: BTreeMap<UserId, u64>,
    /// Present when at least two users added blocks.
    pub participation_balance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalyticsError {
    #[error(transparent)]
    Malformed(#[from] MalformedLog),
    #[error("line {line}: {detail}")]
    Parse { line: usize, detail: String },
}

/// Reads an exported log. Blank lines are skipped.
pub fn parse_log(text: &str) -> Result<Vec<LogRecord>, AnalyticsError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| AnalyticsError::Parse { line: i + 1, detail: e.to_string() }))
        .collect()
}

pub fn summarize(log: &[LogRecord], sync_window_ms: Millis) -> Result<Summary, AnalyticsError> {
    let sessions = segment_sessions(log)?;
    let moments = detect_sync_moments(log, sync_window_ms);

    let mut per_user_sessions: BTreeMap<UserId, u64> = BTreeMap::new();
    for s in &sessions {
        *per_user_sessions.entry(s.user).or_default() += 1;
    }
    let with_blocks: Vec<&Session> = sessions.iter().filter(|s| s.blocks_added > 0).collect();
    let blocks_in_sessions: u64 = with_blocks.iter().map(|s| s.blocks_added).sum();
    let time_in_sessions: Millis = with_blocks.iter().filter_map(|s| s.duration).sum();

    let mut contributions: BTreeMap<UserId, u64> = BTreeMap::new();
    let (mut deleted, mut by_others) = (0, 0);
    for r in log {
        match &r.ev {
            WorldEvent::Added { block } if !block.owner.is_system() => *contributions.entry(block.owner).or_default() += 1,
            WorldEvent::Deleted { block, by, .. } => {
                deleted += 1;
                if *by != block.owner {
                    by_others += 1;
                }
            }
            WorldEvent::Undone { .. } => deleted += 1,
            _ => {}
        }
    }
    let blocks_added: u64 = contributions.values().sum();
    let sync_blocks: u64 = moments.iter().map(|m| m.blocks_added).sum();
    let async_sessions = with_blocks
        .iter()
        .filter(|s| !s.add_times.iter().any(|t| in_any_moment(&moments, *t)))
        .count() as u64;

    let counts: Vec<u64> = contributions.values().copied().collect();
    let participation_balance = (counts.len() >= 2).then(|| participation_balance(&fractions(&counts)).ok()).flatten();

    let users: BTreeSet<UserId> = sessions.iter().map(|s| s.user).collect();
    let report = Report {
        users: users.len() as u64,
        user_sessions: sessions.len() as u64,
        users_with_gt1_session: per_user_sessions.values().filter(|n| **n > 1).count() as u64,
        sessions_with_blocks: with_blocks.len() as u64,
        avg_blocks_per_session: average(blocks_in_sessions, with_blocks.len() as u64),
        avg_time_per_session_min: minutes(average(time_in_sessions, with_blocks.len() as u64)),
        blocks_added,
        blocks_deleted: deleted,
        deletion_by_others: by_others,
        sync_moments: moments.len() as u64,
        sync_blocks,
        async_sessions,
        async_blocks: blocks_added - sync_blocks,
    };
    Ok(Summary { report, sync_window_ms, sessions, sync_moments: moments, contributions, participation_balance })
}
