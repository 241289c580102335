//! Rebuilding a world from its snapshot and log.

use blocks_core::{Seq, WorldState};
use blocks_protocol::{LogRecord, SequencerConfig, WorldSequencer};
use thiserror::Error;

use crate::store::{EventStore, StorageError};

/// A log record that could not be used. The log is cut back to just before it.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("corrupt log record at seq {seq} (line {line}): {detail}")]
pub struct CorruptLog {
    /// The seq the bad record should have had.
    pub seq: Seq,
    pub line: usize,
    pub detail: String,
}

#[derive(Debug)]
pub struct Restored {
    pub sequencer: WorldSequencer,
    pub corrupt: Option<CorruptLog>,
    /// Set when the snapshot on disk was ignored (unreadable, for another
    /// world, or ahead of the surviving log).
    pub snapshot_discarded: bool,
}

struct Parsed {
    records: Vec<LogRecord>,
    /// Byte length of the valid prefix.
    valid_len: usize,
    corrupt: Option<CorruptLog>,
}

fn parse_log(log: &str) -> Parsed {
    let mut records: Vec<LogRecord> = Vec::new();
    let mut offset = 0;
    for (i, chunk) in log.split_inclusive('\n').enumerate() {
        let expected = records.last().map_or(1, |r| r.seq + 1);
        let corrupt = |detail: String| CorruptLog { seq: expected, line: i + 1, detail };
        let Some(line) = chunk.strip_suffix('\n') else {
            return Parsed { records, valid_len: offset, corrupt: Some(corrupt("torn final line".into())) };
        };
        match serde_json::from_str::<LogRecord>(line) {
            Ok(rec) if rec.seq == expected => records.push(rec),
            Ok(rec) => {
                let detail = format!("expected seq {expected}, found {}", rec.seq);
                return Parsed { records, valid_len: offset, corrupt: Some(corrupt(detail)) };
            }
            Err(e) => return Parsed { records, valid_len: offset, corrupt: Some(corrupt(e.to_string())) },
        }
        offset += chunk.len();
    }
    Parsed { records, valid_len: offset, corrupt: None }
}

/// Replays `records` onto `start`, stopping at the first one that does not apply.
fn replay(start: WorldState, records: &[LogRecord], config: SequencerConfig) -> (WorldSequencer, usize, Option<CorruptLog>) {
    let mut sequencer = WorldSequencer::new(start, config);
    for (i, rec) in records.iter().enumerate() {
        if let Err(e) = sequencer.replay(rec) {
            let bad = CorruptLog { seq: rec.seq, line: i + 1, detail: e.to_string() };
            return (sequencer, i, Some(bad));
        }
    }
    (sequencer, records.len(), None)
}

fn same_world(a: &WorldState, b: &WorldState) -> bool {
    a.id() == b.id() && a.kind() == b.kind() && a.location() == b.location()
}

/// Loads `fresh.id()` from `store`. `fresh` is the empty world used when
/// nothing usable was persisted; it also fixes the world's kind and location.
/// A corrupt or torn tail is cut off the stored log.
pub fn restore(store: &mut dyn EventStore, fresh: WorldState, config: SequencerConfig) -> Result<Restored, StorageError> {
    let id = fresh.id().clone();
    let stored = store.load(&id)?;
    let mut parsed = parse_log(&stored.log);
    let last_seq = parsed.records.last().map_or(0, |r| r.seq);

    let snapshot = stored.snapshot.as_deref().map(serde_json::from_str::<WorldState>);
    let (start, mut snapshot_discarded) = match snapshot {
        Some(Ok(s)) if same_world(&s, &fresh) && s.seq() <= last_seq => (s, false),
        Some(_) => (fresh.clone(), true),
        None => (fresh.clone(), false),
    };

    let mut replayed = replay(start, &parsed.records, config);
    if replayed.2.is_some() && !snapshot_discarded && stored.snapshot.is_some() {
        // the log disagrees with something; trust only what the log alone reproduces
        replayed = replay(fresh, &parsed.records, config);
        snapshot_discarded = true;
    }
    let (sequencer, applied, bad) = replayed;
    if let Some(bad) = bad {
        parsed.valid_len = stored.log.split_inclusive('\n').take(applied).map(str::len).sum();
        parsed.corrupt = Some(bad);
    }

    if parsed.corrupt.is_some() {
        store.truncate(&id, parsed.valid_len)?;
    }
    if snapshot_discarded && stored.snapshot.is_some() {
        // keep a stale snapshot from being trusted once the log grows past it again
        let json = serde_json::to_string(sequencer.state()).expect("world state serializes");
        store.write_snapshot(&id, &json)?;
    }
    Ok(Restored { sequencer, corrupt: parsed.corrupt, snapshot_discarded })
}
