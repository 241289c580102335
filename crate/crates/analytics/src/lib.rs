//! Collaboration metrics computed from a world's event log: sessions,
//! participation balance, synchronous moments and the summary report.

pub mod balance;
pub mod report;
pub mod sessions;
pub mod sync;

pub use balance::{participation_balance, InvalidFractions};
pub use report::{parse_log, summarize, AnalyticsError, Report, Summary};
pub use sessions::{segment_sessions, MalformedLog, Session};
pub use sync::{detect_sync_moments, SyncMoment, DEFAULT_SYNC_WINDOW_MS};
