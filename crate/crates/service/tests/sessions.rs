//! Session table: capacity, idle eviction and committed snapshots.

use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use loopsmith_core::handler::Session;
use loopsmith_service::{SessionError, SessionStore};

const IDLE: Duration = Duration::from_secs(60);

#[test]
fn unknown_ids_are_not_found() {
    let store = SessionStore::new(4, IDLE);
    assert_eq!(store.snapshot("x").unwrap_err(), SessionError::NotFound("x".into()));
    assert!(matches!(store.begin_turn("x"), Err(SessionError::NotFound(_))));
    assert!(matches!(store.status("x"), Err(SessionError::NotFound(_))));
}

#[test]
fn fresh_sessions_are_empty() {
    let store = SessionStore::new(4, IDLE);
    let id = store.create().unwrap();
    let s = store.snapshot(&id).unwrap();
    assert_eq!(s.id, id);
    assert!(s.history.is_empty());
    assert!(s.gat.is_empty());
    assert!(s.gat_history.is_empty());
}

#[test]
fn idle_sessions_are_evicted_but_busy_ones_are_kept() {
    let store = SessionStore::new(8, IDLE);
    let idle = store.create().unwrap();
    let busy = store.create().unwrap();
    let guard = store.begin_turn(&busy).unwrap();

    assert_eq!(store.evict_idle_at(Instant::now()), 0, "nothing is idle yet");
    let later = Instant::now() + IDLE * 2;
    assert_eq!(store.evict_idle_at(later), 1);
    assert!(matches!(store.snapshot(&idle), Err(SessionError::NotFound(_))));
    assert!(store.snapshot(&busy).is_ok(), "a session with a turn in flight survives");

    drop(guard);
    assert_eq!(
        store.evict_idle_at(Instant::now() + IDLE / 2),
        0,
        "activity at release refreshed the idle clock"
    );
    assert_eq!(store.evict_idle_at(Instant::now() + IDLE * 3), 1);
    assert!(store.is_empty());
}

#[test]
fn a_full_table_makes_room_only_from_idle_sessions() {
    let store = SessionStore::new(2, Duration::from_millis(50));
    let a = store.create().unwrap();
    let b = store.create().unwrap();
    let _busy = store.begin_turn(&a).unwrap();
    assert_eq!(store.create(), Err(SessionError::Capacity(2)));
    thread::sleep(Duration::from_millis(80));
    // `b` is now idle and can be reclaimed; `a` is busy and cannot.
    let c = store.create().unwrap();
    assert!(store.snapshot(&a).is_ok());
    assert!(store.snapshot(&b).is_err());
    assert!(store.snapshot(&c).is_ok());
    assert_eq!(store.create(), Err(SessionError::Capacity(2)));
}

#[test]
fn snapshots_never_change_under_a_reader() {
    let store = SessionStore::new(4, IDLE);
    let id = store.create().unwrap();
    let before = store.snapshot(&id).unwrap();
    let guard = store.begin_turn(&id).unwrap();
    let mut working = guard.working_copy();
    working.gat.genre = Some("rock".into());
    // Uncommitted edits are invisible.
    assert_eq!(store.snapshot(&id).unwrap().gat.genre, None);
    guard.commit(working);
    drop(guard);
    assert_eq!(before.gat.genre, None, "an old snapshot is immutable");
    assert_eq!(store.snapshot(&id).unwrap().gat.genre.as_deref(), Some("rock"));
}

#[test]
fn only_one_writer_wins_a_race() {
    let store = Arc::new(SessionStore::new(4, IDLE));
    let id = store.create().unwrap();
    let barrier = Arc::new(std::sync::Barrier::new(8));
    let handles: Vec<_> = (0..8)
        .map(|_| {
            let store = store.clone();
            let id = id.clone();
            let barrier = barrier.clone();
            thread::spawn(move || {
                barrier.wait();
                store.begin_turn(&id).map(|g| {
                    // Hold long enough that every rival attempts while it is taken.
                    thread::sleep(Duration::from_millis(300));
                    drop(g);
                })
            })
        })
        .collect();
    let results: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    let winners = results.iter().filter(|r| r.is_ok()).count();
    assert_eq!(winners, 1, "{results:?}");
    assert!(results
        .iter()
        .filter_map(|r| r.as_ref().err())
        .all(|e| *e == SessionError::Busy(id.clone())));
}

#[test]
fn commits_replace_the_whole_session() {
    let store = SessionStore::new(4, IDLE);
    let id = store.create().unwrap();
    let guard = store.begin_turn(&id).unwrap();
    let mut next = Session::new(id.clone());
    next.gat.instruments = vec!["saxophone".into()];
    guard.commit(next.clone());
    drop(guard);
    assert_eq!(*store.snapshot(&id).unwrap(), next);
    assert_eq!(store.status(&id).unwrap().turns, 0);
}
