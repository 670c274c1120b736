//! Network service and command-line runners for the loopsmith engine:
//! an HTTP session API, an interactive chat loop and a batch transcript
//! replayer.

pub mod api;
pub mod config;
pub mod sessions;

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;

use loopsmith_core::handler::{Engine, Session};
use loopsmith_core::transcript::{replay, ReplayReport, Transcript, TranscriptError};

pub use api::{router, AppState};
pub use config::{ConfigError, ServiceConfig};
pub use sessions::{SessionError, SessionStore};

/// File name of the replay report inside the output directory.
pub const REPORT_FILE: &str = "report.json";

/// Builds the shared state for [`router`] from a configuration.
pub fn app_state(config: &ServiceConfig) -> Result<AppState, ConfigError> {
    let engine = config.build_engine()?;
    Ok(AppState {
        engine: Arc::new(engine),
        sessions: Arc::new(SessionStore::new(
            config.sessions.capacity,
            Duration::from_secs(config.sessions.idle_timeout_seconds),
        )),
    })
}

/// Runs the HTTP service until Ctrl-C.
pub async fn serve(config: ServiceConfig) -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
    let state = app_state(&config)?;
    let sessions = state.sessions.clone();
    let sweep = Duration::from_secs((config.sessions.idle_timeout_seconds / 4).clamp(1, 60));
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(sweep);
        loop {
            tick.tick().await;
            sessions.evict_idle();
        }
    });
    let listener = tokio::net::TcpListener::bind(&config.bind).await?;
    tracing::info!(addr = %listener.local_addr()?, root = %config.asset_root.display(), "listening");
    axum::serve(listener, router(state, config.max_upload_bytes))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error(transparent)]
    Transcript(#[from] TranscriptError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0} already contains music files; replay needs an empty output directory so ids are reproducible")]
    OutputNotEmpty(PathBuf),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Replays `transcript` in one fresh session with assets under `out`, and
/// writes [`REPORT_FILE`] there.
///
/// The transcript is fully validated before any turn runs. Failed turns are
/// recorded and replay continues; check [`ReplayReport::succeeded`].
pub fn run_replay(config: &ServiceConfig, transcript: &Path, out: &Path) -> Result<ReplayReport, ReplayError> {
    let transcript = Transcript::load(transcript)?;
    let music = out.join("music");
    let occupied = std::fs::read_dir(&music)
        .map(|mut entries| entries.next().is_some())
        .unwrap_or(false);
    if occupied {
        return Err(ReplayError::OutputNotEmpty(music));
    }
    let engine = config.build_engine_at(out)?;
    let report = replay(&engine, &transcript)?;
    let path = out.join(REPORT_FILE);
    std::fs::write(&path, report.to_bytes()).map_err(|source| ReplayError::Io { path, source })?;
    Ok(report)
}

/// Interactive loop over `input`, writing replies to `output`.
///
/// Lines are messages, except for these commands:
/// `/upload <wav> <message>` attaches a file, `/state` prints the attribute
/// table, `/quit` ends the session.
pub fn run_chat<R: BufRead, W: Write>(engine: &Engine, input: R, mut output: W) -> std::io::Result<Session> {
    let mut session = Session::new("chat");
    writeln!(output, "Type a message, /upload <wav> <message>, /state or /quit.")?;
    for line in input.lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line == "/quit" {
            break;
        }
        if line == "/state" {
            let json = serde_json::to_string_pretty(&session.gat).map_err(std::io::Error::other)?;
            writeln!(output, "{json}")?;
            continue;
        }
        let (text, attached) = match line.strip_prefix("/upload ") {
            Some(rest) => {
                let (file, text) = rest.trim().split_once(' ').unwrap_or((rest.trim(), ""));
                let bytes = match std::fs::read(file) {
                    Ok(b) => b,
                    Err(e) => {
                        writeln!(output, "error: cannot read {file}: {e}")?;
                        continue;
                    }
                };
                match engine.store().import_wav(&bytes) {
                    Ok(asset) => (text.to_owned(), Some(asset)),
                    Err(e) => {
                        writeln!(output, "error: {file}: {e}")?;
                        continue;
                    }
                }
            }
            None => (line.to_owned(), None),
        };
        match engine.handle_query(&mut session, &text, attached.as_ref()) {
            Ok(turn) => {
                for (i, step) in turn.steps.iter().enumerate() {
                    writeln!(output, "  [{}] {} <- {}", i + 1, step.action, step.action_input)?;
                    writeln!(output, "      {}", step.observation)?;
                }
                writeln!(output, "AI: {}", turn.answer)?;
            }
            Err(e) => {
                for (i, step) in e.steps().iter().enumerate() {
                    writeln!(output, "  [{}] {} <- {}", i + 1, step.action, step.action_input)?;
                }
                writeln!(output, "error: {e}")?;
            }
        }
    }
    Ok(session)
}
