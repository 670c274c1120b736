//! Scripted multi-round dialogues and their replay reports.
//!
//! A transcript is JSON Lines, one user message per line:
//!
//! ```text
//! {"text": "Generate a smooth rock music loop with guitar and snare drums."}
//! {"text": "Add a saxophone track.", "audio": "inputs/take1.wav"}
//! ```
//!
//! `audio` is optional and resolved against the transcript's directory.
//! Blank lines and lines starting with `#` are skipped.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{decode_wav, AudioError};
use crate::gat::GlobalAttributeTable;
use crate::handler::{Engine, Session, StepRecord};

#[derive(Debug, Error)]
pub enum TranscriptError {
    #[error("cannot read {path}: {detail}")]
    Io { path: String, detail: String },
    #[error("line {line}: {detail}")]
    Syntax { line: usize, detail: String },
    #[error("transcript has no messages")]
    Empty,
    #[error("line {line}: referenced audio {path} is missing or unreadable: {detail}")]
    Audio { line: usize, path: String, detail: String },
    #[error("cannot import {path}: {source}")]
    Import {
        path: String,
        #[source]
        source: AudioError,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranscriptMessage {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio: Option<PathBuf>,
}

/// A validated, non-empty list of messages whose audio files exist and decode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transcript {
    messages: Vec<TranscriptMessage>,
}

impl Transcript {
    /// Parses JSON Lines; relative audio paths are resolved against `base`
    /// and checked before anything runs.
    pub fn parse(text: &str, base: &Path) -> Result<Self, TranscriptError> {
        let mut messages = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let mut msg: TranscriptMessage = serde_json::from_str(trimmed).map_err(|e| TranscriptError::Syntax {
                line,
                detail: e.to_string(),
            })?;
            if msg.text.trim().is_empty() {
                return Err(TranscriptError::Syntax {
                    line,
                    detail: "message text is empty".into(),
                });
            }
            if let Some(audio) = msg.audio.take() {
                let path = if audio.is_absolute() { audio } else { base.join(audio) };
                let check = fs::read(&path)
                    .map_err(|e| e.to_string())
                    .and_then(|b| decode_wav(&b).map(|_| ()).map_err(|e| e.to_string()));
                if let Err(detail) = check {
                    return Err(TranscriptError::Audio {
                        line,
                        path: path.display().to_string(),
                        detail,
                    });
                }
                msg.audio = Some(path);
            }
            messages.push(msg);
        }
        if messages.is_empty() {
            return Err(TranscriptError::Empty);
        }
        Ok(Self { messages })
    }

    pub fn load(path: &Path) -> Result<Self, TranscriptError> {
        let text = fs::read_to_string(path).map_err(|e| TranscriptError::Io {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn messages(&self) -> &[TranscriptMessage] {
        &self.messages
    }
}

/// Outcome of one replayed message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnReport {
    pub index: usize,
    pub query: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub uploaded_asset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub produced_assets: Vec<String>,
    pub steps: Vec<StepRecord>,
    /// The attribute table after this message (unchanged on failure).
    pub gat: GlobalAttributeTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub turns: Vec<TurnReport>,
    pub failed_turns: usize,
}

impl ReplayReport {
    pub fn succeeded(&self) -> bool {
        self.failed_turns == 0
    }

    /// Stable serialization: pretty JSON with a trailing newline.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("report serializes");
        out.push(b'\n');
        out
    }
}

/// Replays every message in one fresh session. A failed turn is recorded
/// and the replay continues.
pub fn replay(engine: &Engine, transcript: &Transcript) -> Result<ReplayReport, TranscriptError> {
    let mut session = Session::new("replay");
    let mut turns = Vec::with_capacity(transcript.messages.len());
    let mut failed_turns = 0;
    for (index, msg) in transcript.messages.iter().enumerate() {
        let uploaded = match &msg.audio {
            Some(path) => {
                let bytes = fs::read(path).map_err(|e| TranscriptError::Io {
                    path: path.display().to_string(),
                    detail: e.to_string(),
                })?;
                let asset = engine.store().import_wav(&bytes).map_err(|source| TranscriptError::Import {
                    path: path.display().to_string(),
                    source,
                })?;
                Some(asset)
            }
            None => None,
        };
        let report = match engine.handle_query(&mut session, &msg.text, uploaded.as_ref()) {
            Ok(turn) => TurnReport {
                index,
                query: msg.text.clone(),
                uploaded_asset: uploaded.map(|a| a.relative_path),
                answer: Some(turn.answer),
                error: None,
                produced_assets: turn.produced_assets.into_iter().map(|a| a.relative_path).collect(),
                steps: turn.steps,
                gat: session.gat.clone(),
            },
            Err(e) => {
                failed_turns += 1;
                tracing::warn!(turn = index, "replayed turn failed: {e}");
                TurnReport {
                    index,
                    query: msg.text.clone(),
                    uploaded_asset: uploaded.map(|a| a.relative_path),
                    answer: None,
                    error: Some(e.to_string()),
                    produced_assets: Vec::new(),
                    steps: e.steps().to_vec(),
                    gat: session.gat.clone(),
                }
            }
        };
        turns.push(report);
    }
    Ok(ReplayReport { turns, failed_turns })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_lines_and_skips_comments() {
        let t = Transcript::parse("# demo\n{\"text\": \"hi\"}\n\n{\"text\": \"bye\"}\n", Path::new(".")).unwrap();
        assert_eq!(t.messages().len(), 2);
    }

    #[test]
    fn rejects_empty_bad_and_missing_audio() {
        assert!(matches!(Transcript::parse("# nothing\n", Path::new(".")), Err(TranscriptError::Empty)));
        assert!(matches!(
            Transcript::parse("{\"txt\": \"x\"}", Path::new(".")),
            Err(TranscriptError::Syntax { line: 1, .. })
        ));
        assert!(matches!(
            Transcript::parse("{\"text\": \"  \"}", Path::new(".")),
            Err(TranscriptError::Syntax { .. })
        ));
        let dir = tempfile::tempdir().unwrap();
        let err = Transcript::parse("{\"text\": \"x\"}\n{\"text\": \"y\", \"audio\": \"nope.wav\"}", dir.path());
        assert!(matches!(err, Err(TranscriptError::Audio { line: 2, .. })));
    }
}
