//! Hosts worlds: connection lifecycle, personal and shared worlds, event-log
//! persistence with snapshots, and the HTTP/WebSocket front end.

pub mod config;
pub mod http;
pub mod hub;
pub mod restore;
pub mod store;

pub use config::{default_worlds, load_config, parse_config, WorldSpec};
pub use hub::{ConnId, Hub, HubConfig, HubError, Outgoing, WorldSnapshot};
pub use restore::{restore, CorruptLog, Restored};
pub use store::{EventStore, FileStore, MemStore, StorageError, StoredWorld};
