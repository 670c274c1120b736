use std::sync::atomic::{AtomicUsize, Ordering};

use super::{BackendError, Capability, MusicBackend};
use crate::audio::AudioBuffer;

/// Similarity scorer that replays a fixed score sequence, then returns 0.
///
/// Used to drive the add-track acceptance loop through exact retry paths.
#[derive(Debug)]
pub struct ScriptedSimilarity {
    scores: Vec<f64>,
    calls: AtomicUsize,
}

impl ScriptedSimilarity {
    pub fn new(scores: Vec<f64>) -> Self {
        Self {
            scores,
            calls: AtomicUsize::new(0),
        }
    }

    /// Number of scores handed out so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl MusicBackend for ScriptedSimilarity {
    fn name(&self) -> &str {
        "scripted-similarity"
    }

    fn capabilities(&self) -> &[Capability] {
        &[Capability::Similarity]
    }

    fn similarity(&self, _buf: &AudioBuffer, _desc: &str) -> Result<f64, BackendError> {
        let i = self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(self.scores.get(i).copied().unwrap_or(0.0).clamp(0.0, 1.0))
    }
}
