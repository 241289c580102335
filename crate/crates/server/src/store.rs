//! Durable storage for world logs and snapshots.
//!
//! Layout on disk (flat, one pair of files per world):
//!
//! ```text
//! <data-dir>/<world>.ndjson         append-only log, one LogRecord per line
//! <data-dir>/<world>.snapshot.json  latest WorldState, replaced atomically
//! ```

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use blocks_core::WorldId;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("storage failure for world {world}: {source}")]
    Io { world: WorldId, source: io::Error },
    #[error("world id {0} is not usable as a storage key")]
    BadWorldId(WorldId),
    #[error("injected storage failure")]
    Injected,
}

/// Raw persisted content of one world, before parsing.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct StoredWorld {
    pub snapshot: Option<String>,
    pub log: String,
}

pub trait EventStore: Send {
    fn load(&mut self, world: &WorldId) -> Result<StoredWorld, StorageError>;
    /// Appends one line (without the trailing newline) and makes it durable.
    fn append(&mut self, world: &WorldId, line: &str) -> Result<(), StorageError>;
    /// Cuts the log back to its first `len` bytes.
    fn truncate(&mut self, world: &WorldId, len: usize) -> Result<(), StorageError>;
    fn write_snapshot(&mut self, world: &WorldId, json: &str) -> Result<(), StorageError>;
    fn export(&self, world: &WorldId) -> Result<String, StorageError>;
}

pub struct FileStore {
    dir: PathBuf,
    open: HashMap<WorldId, File>,
}

impl FileStore {
    pub fn open(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir, open: HashMap::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn log_path(&self, world: &WorldId) -> PathBuf {
        self.dir.join(format!("{}.ndjson", world.as_str()))
    }

    pub fn snapshot_path(&self, world: &WorldId) -> PathBuf {
        self.dir.join(format!("{}.snapshot.json", world.as_str()))
    }

    fn checked(world: &WorldId) -> Result<(), StorageError> {
        if world.is_valid() {
            Ok(())
        } else {
            Err(StorageError::BadWorldId(world.clone()))
        }
    }

    fn io(world: &WorldId) -> impl FnOnce(io::Error) -> StorageError + '_ {
        move |source| StorageError::Io { world: world.clone(), source }
    }
}

fn read_optional(path: &Path) -> io::Result<Option<String>> {
    match fs::read(path) {
        Ok(bytes) => Ok(Some(String::from_utf8_lossy(&bytes).into_owned())),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e),
    }
}

impl EventStore for FileStore {
    fn load(&mut self, world: &WorldId) -> Result<StoredWorld, StorageError> {
        Self::checked(world)?;
        let snapshot = read_optional(&self.snapshot_path(world)).map_err(Self::io(world))?;
        let log = read_optional(&self.log_path(world)).map_err(Self::io(world))?.unwrap_or_default();
        Ok(StoredWorld { snapshot, log })
    }

    fn append(&mut self, world: &WorldId, line: &str) -> Result<(), StorageError> {
        Self::checked(world)?;
        if !self.open.contains_key(world) {
            let f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(self.log_path(world))
                .map_err(Self::io(world))?;
            self.open.insert(world.clone(), f);
        }
        let f = self.open.get_mut(world).expect("opened above");
        let mut buf = Vec::with_capacity(line.len() + 1);
        buf.extend_from_slice(line.as_bytes());
        buf.push(b'\n');
        f.write_all(&buf).and_then(|_| f.sync_data()).map_err(Self::io(world))
    }

    fn truncate(&mut self, world: &WorldId, len: usize) -> Result<(), StorageError> {
        Self::checked(world)?;
        self.open.remove(world);
        let f = OpenOptions::new().write(true).open(self.log_path(world)).map_err(Self::io(world))?;
        f.set_len(len as u64).and_then(|_| f.sync_all()).map_err(Self::io(world))
    }

    fn write_snapshot(&mut self, world: &WorldId, json: &str) -> Result<(), StorageError> {
        Self::checked(world)?;
        let path = self.snapshot_path(world);
        let tmp = path.with_extension("json.tmp");
        let write = || -> io::Result<()> {
            let mut f = File::create(&tmp)?;
            f.write_all(json.as_bytes())?;
            f.sync_all()?;
            fs::rename(&tmp, &path)
        };
        write().map_err(Self::io(world))
    }

    fn export(&self, world: &WorldId) -> Result<String, StorageError> {
        Self::checked(world)?;
        Ok(read_optional(&self.log_path(world)).map_err(Self::io(world))?.unwrap_or_default())
    }
}

#[derive(Debug, Default)]
struct MemInner {
    worlds: HashMap<WorldId, StoredWorld>,
    /// Appends left before every write fails.
    fail_after: Option<usize>,
}

/// In-memory store. Clones share the same contents, so a test can drop a hub
/// and restore a new one from what the old one wrote.
#[derive(Debug, Default, Clone)]
pub struct MemStore {
    inner: Arc<Mutex<MemInner>>,
}

impl MemStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Makes every write after the next `appends` appends fail.
    pub fn fail_after(&self, appends: usize) {
        self.inner.lock().unwrap().fail_after = Some(appends);
    }

    pub fn world(&self, world: &WorldId) -> StoredWorld {
        self.inner.lock().unwrap().worlds.get(world).cloned().unwrap_or_default()
    }

    pub fn world_ids(&self) -> Vec<WorldId> {
        let mut ids: Vec<WorldId> = self.inner.lock().unwrap().worlds.keys().cloned().collect();
        ids.sort();
        ids
    }

    /// Overwrites a world's raw content, e.g. to plant a torn line.
    pub fn put(&self, world: &WorldId, stored: StoredWorld) {
        self.inner.lock().unwrap().worlds.insert(world.clone(), stored);
    }
}

impl MemInner {
    fn write_allowed(&mut self) -> Result<(), StorageError> {
        match &mut self.fail_after {
            Some(0) => Err(StorageError::Injected),
            Some(n) => {
                *n -= 1;
                Ok(())
            }
            None => Ok(()),
        }
    }
}

impl EventStore for MemStore {
    fn load(&mut self, world: &WorldId) -> Result<StoredWorld, StorageError> {
        Ok(self.world(world))
    }

    fn append(&mut self, world: &WorldId, line: &str) -> Result<(), StorageError> {
        let mut inner = self.inner.lock().unwrap();
        inner.write_allowed()?;
        let w = inner.worlds.entry(world.clone()).or_default();
        w.log.push_str(line);
        w.log.push('\n');
        Ok(())
    }

    fn truncate(&mut self, world: &WorldId, len: usize) -> Result<(), StorageError> {
        let mut inner = self.inner.lock().unwrap();
        if let Some(w) = inner.worlds.get_mut(world) {
            w.log.truncate(len);
        }
        Ok(())
    }

    fn write_snapshot(&mut self, world: &WorldId, json: &str) -> Result<(), StorageError> {
        let mut inner = self.inner.lock().unwrap();
        if matches!(inner.fail_after, Some(0)) {
            return Err(StorageError::Injected);
        }
        inner.worlds.entry(world.clone()).or_default().snapshot = Some(json.to_owned());
        Ok(())
    }

    fn export(&self, world: &WorldId) -> Result<String, StorageError> {
        Ok(self.world(world).log)
    }
}
