//! In-memory session table with per-session single-writer turns.
//!
//! Each session keeps its last committed state behind an `Arc`. Readers
//! clone the `Arc` and never observe a half-finished turn; the one writer
//! works on a private copy and swaps it in on success.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::{Mutex, RwLock};
use thiserror::Error;

use loopsmith_core::handler::Session;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SessionError {
    #[error("unknown session: {0}")]
    NotFound(String),
    #[error("session {0} is busy with another message")]
    Busy(String),
    #[error("session limit of {0} reached")]
    Capacity(usize),
}

#[derive(Debug)]
struct Slot {
    committed: RwLock<Arc<Session>>,
    busy: AtomicBool,
    created_at: Instant,
    last_active: Mutex<Instant>,
}

/// Point-in-time facts about one session.
#[derive(Debug, Clone)]
pub struct SessionStatus {
    pub busy: bool,
    pub turns: usize,
    pub age: Duration,
    pub idle: Duration,
}

#[derive(Debug)]
pub struct SessionStore {
    slots: Mutex<HashMap<String, Arc<Slot>>>,
    capacity: usize,
    idle_timeout: Duration,
}

impl SessionStore {
    pub fn new(capacity: usize, idle_timeout: Duration) -> Self {
        Self {
            slots: Mutex::new(HashMap::new()),
            capacity: capacity.max(1),
            idle_timeout,
        }
    }

    /// Creates an empty session, evicting idle ones first if the table is
    /// full.
    pub fn create(&self) -> Result<String, SessionError> {
        self.create_at(Instant::now())
    }

    fn create_at(&self, now: Instant) -> Result<String, SessionError> {
        let mut slots = self.slots.lock();
        if slots.len() >= self.capacity {
            Self::evict_locked(&mut slots, now, self.idle_timeout);
            if slots.len() >= self.capacity {
                return Err(SessionError::Capacity(self.capacity));
            }
        }
        let id = loop {
            let candidate = format!("{:016x}", rand::random::<u64>());
            if !slots.contains_key(&candidate) {
                break candidate;
            }
        };
        slots.insert(
            id.clone(),
            Arc::new(Slot {
                committed: RwLock::new(Arc::new(Session::new(id.clone()))),
                busy: AtomicBool::new(false),
                created_at: now,
                last_active: Mutex::new(now),
            }),
        );
        tracing::info!(session = %id, "session created");
        Ok(id)
    }

    fn evict_locked(slots: &mut HashMap<String, Arc<Slot>>, now: Instant, timeout: Duration) -> usize {
        let before = slots.len();
        slots.retain(|id, slot| {
            let idle = now.saturating_duration_since(*slot.last_active.lock());
            let keep = slot.busy.load(Ordering::SeqCst) || idle < timeout;
            if !keep {
                tracing::info!(session = %id, "evicting idle session");
            }
            keep
        });
        before - slots.len()
    }

    /// Drops sessions idle for longer than the timeout, never one with a
    /// turn in flight. Returns how many were removed.
    pub fn evict_idle(&self) -> usize {
        self.evict_idle_at(Instant::now())
    }

    pub fn evict_idle_at(&self, now: Instant) -> usize {
        Self::evict_locked(&mut self.slots.lock(), now, self.idle_timeout)
    }

    fn slot(&self, id: &str) -> Result<Arc<Slot>, SessionError> {
        self.slots
            .lock()
            .get(id)
            .cloned()
            .ok_or_else(|| SessionError::NotFound(id.to_owned()))
    }

    /// The last committed state.
    pub fn snapshot(&self, id: &str) -> Result<Arc<Session>, SessionError> {
        Ok(self.slot(id)?.committed.read().clone())
    }

    pub fn status(&self, id: &str) -> Result<SessionStatus, SessionError> {
        let slot = self.slot(id)?;
        let now = Instant::now();
        let turns = slot.committed.read().history.len();
        let last_active = *slot.last_active.lock();
        Ok(SessionStatus {
            busy: slot.busy.load(Ordering::SeqCst),
            turns,
            age: now.saturating_duration_since(slot.created_at),
            idle: now.saturating_duration_since(last_active),
        })
    }

    pub fn len(&self) -> usize {
        self.slots.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Claims the session's writer role. Fails with [`SessionError::Busy`]
    /// while another turn holds it.
    pub fn begin_turn(&self, id: &str) -> Result<TurnGuard, SessionError> {
        let slot = self.slot(id)?;
        if slot
            .busy
            .compare_exchange(false, true, Ordering::SeqCst, Ordering::SeqCst)
            .is_err()
        {
            return Err(SessionError::Busy(id.to_owned()));
        }
        *slot.last_active.lock() = Instant::now();
        Ok(TurnGuard { slot })
    }
}

/// Exclusive write access to one session; released on drop.
#[derive(Debug)]
pub struct TurnGuard {
    slot: Arc<Slot>,
}

impl TurnGuard {
    /// A private working copy of the committed state.
    pub fn working_copy(&self) -> Session {
        (**self.slot.committed.read()).clone()
    }

    /// Publishes `session` as the new committed state.
    pub fn commit(&self, session: Session) {
        *self.slot.committed.write() = Arc::new(session);
    }
}

impl Drop for TurnGuard {
    fn drop(&mut self) {
        *self.slot.last_active.lock() = Instant::now();
        self.slot.busy.store(false, Ordering::SeqCst);
    }
}
