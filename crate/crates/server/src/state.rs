use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use thiserror::Error;
use tokio::sync::Semaphore;

use spice_core::backend::Denoiser;
use spice_core::model::{load_project, save_project, ProjectError, MANIFEST_FILE};
use spice_core::EditSession;

use crate::error::ApiError;
use crate::routes::JobStatus;
use crate::ServerConfig;

/// Failure while opening the project root.
#[derive(Debug, Error)]
pub enum StateError {
    #[error("cannot read project root {path}: {1}", path = .0.display())]
    Io(PathBuf, #[source] std::io::Error),
    #[error("cannot load session {path}: {1}", path = .0.display())]
    Project(PathBuf, #[source] ProjectError),
}

/// Per-session state. The session itself is only replaced wholesale on commit.
pub(crate) struct SessionSlot {
    session: Mutex<Arc<EditSession>>,
    busy: AtomicBool,
    cancel: Mutex<Arc<AtomicBool>>,
    pub(crate) jobs: Mutex<HashMap<String, JobStatus>>,
    pub(crate) sweeps: Mutex<HashMap<String, Arc<Vec<u8>>>>,
}

impl SessionSlot {
    fn new(session: EditSession) -> Self {
        Self {
            session: Mutex::new(Arc::new(session)),
            busy: AtomicBool::new(false),
            cancel: Mutex::new(Arc::new(AtomicBool::new(false))),
            jobs: Mutex::new(HashMap::new()),
            sweeps: Mutex::new(HashMap::new()),
        }
    }

    pub(crate) fn snapshot(&self) -> Arc<EditSession> {
        Arc::clone(&lock(&self.session))
    }

    pub(crate) fn is_busy(&self) -> bool {
        self.busy.load(Ordering::SeqCst)
    }

    /// Claims the slot for one step; released when the guard drops.
    pub(crate) fn try_claim(self: &Arc<Self>) -> Result<BusyGuard, ApiError> {
        self.busy
            .compare_exchange(false, true, Ordering::SeqCst, Ordering::SeqCst)
            .map_err(|_| ApiError::conflict("a step is already in flight for this session"))?;
        let flag = Arc::new(AtomicBool::new(false));
        *lock(&self.cancel) = Arc::clone(&flag);
        Ok(BusyGuard {
            slot: Arc::clone(self),
            cancel: flag,
        })
    }

    /// Returns true when there was a step to cancel.
    pub(crate) fn cancel(&self) -> bool {
        if !self.is_busy() {
            return false;
        }
        lock(&self.cancel).store(true, Ordering::SeqCst);
        true
    }
}

pub(crate) struct BusyGuard {
    slot: Arc<SessionSlot>,
    pub(crate) cancel: Arc<AtomicBool>,
}

impl BusyGuard {
    pub(crate) fn slot(&self) -> &Arc<SessionSlot> {
        &self.slot
    }
}

impl Drop for BusyGuard {
    fn drop(&mut self) {
        self.slot.busy.store(false, Ordering::SeqCst);
    }
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

pub(crate) fn lock_map<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    lock(m)
}

struct Inner {
    root: PathBuf,
    backend: Arc<dyn Denoiser>,
    parallelism: usize,
    permits: Arc<Semaphore>,
    sessions: RwLock<HashMap<String, Arc<SessionSlot>>>,
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

impl AppState {
    /// Opens the project root, loading every session directory found in it.
    pub fn open(config: ServerConfig) -> Result<Self, StateError> {
        let root = config.project_root;
        fs::create_dir_all(&root).map_err(|e| StateError::Io(root.clone(), e))?;
        let mut sessions = HashMap::new();
        let entries = fs::read_dir(&root).map_err(|e| StateError::Io(root.clone(), e))?;
        for entry in entries {
            let entry = entry.map_err(|e| StateError::Io(root.clone(), e))?;
            let dir = entry.path();
            if !dir.join(MANIFEST_FILE).is_file() {
                continue;
            }
            let session = load_project(&dir).map_err(|e| StateError::Project(dir.clone(), e))?;
            let id = if session.id().is_empty() {
                entry.file_name().to_string_lossy().into_owned()
            } else {
                session.id().to_string()
            };
            sessions.insert(id, Arc::new(SessionSlot::new(session)));
        }
        let parallelism = config.parallelism.max(1);
        Ok(Self {
            inner: Arc::new(Inner {
                root,
                backend: config.backend,
                parallelism,
                permits: Arc::new(Semaphore::new(parallelism)),
                sessions: RwLock::new(sessions),
            }),
        })
    }

    pub fn backend(&self) -> &Arc<dyn Denoiser> {
        &self.inner.backend
    }

    pub fn parallelism(&self) -> usize {
        self.inner.parallelism
    }

    pub(crate) fn permits(&self) -> &Arc<Semaphore> {
        &self.inner.permits
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self
            .inner
            .sessions
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .keys()
            .cloned()
            .collect();
        ids.sort();
        ids
    }

    fn session_dir(&self, id: &str) -> PathBuf {
        self.inner.root.join(id)
    }

    pub(crate) fn slot(&self, id: &str) -> Result<Arc<SessionSlot>, ApiError> {
        self.inner
            .sessions
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("unknown session '{id}'")))
    }

    /// Persists a new session and registers it.
    pub(crate) fn insert(&self, session: EditSession) -> Result<(), ProjectError> {
        save_project(&session, &self.session_dir(session.id()))?;
        let id = session.id().to_string();
        self.inner
            .sessions
            .write()
            .unwrap_or_else(|p| p.into_inner())
            .insert(id, Arc::new(SessionSlot::new(session)));
        Ok(())
    }

    /// Applies `edit` to a copy of the session, persists the copy and only
    /// then makes it visible. On any error the live session is untouched.
    pub(crate) fn update<T>(
        &self,
        slot: &SessionSlot,
        edit: impl FnOnce(&mut EditSession) -> Result<T, ApiError>,
    ) -> Result<T, ApiError> {
        let mut guard = lock(&slot.session);
        let mut next = EditSession::clone(&guard);
        let out = edit(&mut next)?;
        save_project(&next, &self.session_dir(next.id()))?;
        *guard = Arc::new(next);
        Ok(out)
    }

    /// Signals every in-flight step to stop at its next checkpoint.
    pub fn cancel_all(&self) {
        let sessions = self.inner.sessions.read().unwrap_or_else(|p| p.into_inner());
        for slot in sessions.values() {
            slot.cancel();
        }
    }

    pub fn project_root(&self) -> &Path {
        &self.inner.root
    }
}
