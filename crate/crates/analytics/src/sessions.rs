//! Splitting a world log into per-user sessions (join to leave).

use std::collections::{BTreeMap, BTreeSet};

use blocks_core::{Color, Millis, Seq, UserId, WorldEvent};
use blocks_protocol::LogRecord;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MalformedLog {
    #[error("seq {seq}: {user} left without having joined")]
    LeaveWithoutJoin { seq: Seq, user: UserId },
    #[error("seq {seq}: {user} added a block outside any session")]
    AddOutsideSession { seq: Seq, user: UserId },
    #[error("seq {seq} follows seq {prev}")]
    OutOfOrder { seq: Seq, prev: Seq },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub user: UserId,
    pub connect_at: Millis,
    pub disconnect_at: Millis,
    pub blocks_added: u64,
    /// Present only for sessions that added at least one block.
    pub duration: Option<Millis>,
    /// The log ended (or the user joined again) before a matching leave.
    pub truncated: bool,
    /// Distinct colors used for the blocks added in this session.
    pub colors_used: usize,
    #[serde(skip)]
    pub add_times: Vec<Millis>,
}

struct Open {
    index: usize,
    colors: BTreeSet<Color>,
}

/// Sessions in order of their join. Blocks added by the system user (the
/// starter structure) belong to no session and are ignored.
pub fn segment_sessions(log: &[LogRecord]) -> Result<Vec<Session>, MalformedLog> {
    let mut sessions: Vec<Session> = Vec::new();
    let mut open: BTreeMap<UserId, Open> = BTreeMap::new();
    let close = |s: &mut Session, o: Open, at: Millis, truncated: bool| {
        s.disconnect_at = at;
        s.truncated = truncated;
        s.colors_used = o.colors.len();
        s.duration = (s.blocks_added > 0).then(|| at.saturating_sub(s.connect_at));
    };
    let mut prev: Option<Seq> = None;
    for rec in log {
        if let Some(p) = prev {
            if rec.seq <= p {
                return Err(MalformedLog::OutOfOrder { seq: rec.seq, prev: p });
            }
        }
        prev = Some(rec.seq);
        match &rec.ev {
            WorldEvent::Joined { user } => {
                if let Some(o) = open.remove(user) {
                    close(&mut sessions[o.index], o, rec.at, true);
                }
                open.insert(*user, Open { index: sessions.len(), colors: BTreeSet::new() });
                sessions.push(Session {
                    user: *user,
                    connect_at: rec.at,
                    disconnect_at: rec.at,
                    blocks_added: 0,
                    duration: None,
                    truncated: false,
                    colors_used: 0,
                    add_times: Vec::new(),
                });
            }
            WorldEvent::Left { user } => {
                let o = open.remove(user).ok_or(MalformedLog::LeaveWithoutJoin { seq: rec.seq, user: *user })?;
                close(&mut sessions[o.index], o, rec.at, false);
            }
            WorldEvent::Added { block } if !block.owner.is_system() => {
                let o = open
                    .get_mut(&block.owner)
                    .ok_or(MalformedLog::AddOutsideSession { seq: rec.seq, user: block.owner })?;
                o.colors.insert(block.color);
                let s = &mut sessions[o.index];
                s.blocks_added += 1;
                s.add_times.push(rec.at);
            }
            _ => {}
        }
    }
    let end = log.last().map_or(0, |r| r.at);
    for (_, o) in std::mem::take(&mut open) {
        let i = o.index;
        close(&mut sessions[i], o, end, true);
    }
    Ok(sessions)
}
