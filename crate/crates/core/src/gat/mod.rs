//! The global attribute table: a blackboard of the loop's musical attributes
//! that every tool reads and contributes to across dialogue rounds.

mod key;

pub use key::{transpose_key, Key, Mode, MAX_TRANSPOSE};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{AssetStore, AudioAsset};

pub const MIN_BPM: f64 = 20.0;
pub const MAX_BPM: f64 = 400.0;
pub const MIN_SPEED: f64 = 0.25;
pub const MAX_SPEED: f64 = 4.0;

/// Stem names a separation backend produces.
pub const STEM_NAMES: [&str; 6] = ["vocals", "drums", "bass", "guitar", "piano", "other"];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GatError {
    #[error("bpm {0} is outside [{MIN_BPM}, {MAX_BPM}]")]
    BpmRange(f64),
    #[error("speed factor {0} is outside [{MIN_SPEED}, {MAX_SPEED}]")]
    SpeedRange(f64),
    #[error("speed factor must be positive, got {0}")]
    NonPositiveSpeed(f64),
    #[error("transposition of {0} semitones exceeds ±{MAX_TRANSPOSE}")]
    TransposeRange(i32),
    #[error("unknown key spelling {0:?}")]
    UnknownKey(String),
    #[error("stem {0:?} is neither a separable stem nor a listed instrument")]
    UnknownStem(String),
    #[error("snapshot for turn {got} does not follow turn {last}")]
    SnapshotOrder { last: usize, got: usize },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Tracks {
    pub mix: Option<AudioAsset>,
    pub stems: BTreeMap<String, AudioAsset>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GlobalAttributeTable {
    pub bpm: Option<f64>,
    pub key: Option<Key>,
    pub genre: Option<String>,
    pub mood: Option<String>,
    pub instruments: Vec<String>,
    pub description: String,
    pub tracks: Tracks,
}

/// A partial update contributed by one tool invocation.
///
/// Applied in field order: `reset`, scalar fields, `instruments` (replace),
/// `add_instruments`, `remove_instruments`, then track references.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AttributeUpdates {
    /// Start from an empty table (a fresh draft replaces the old loop).
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub reset: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bpm: Option<f64>,
    /// Raw key spelling, validated on apply.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub genre: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mood: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruments: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub add_instruments: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub remove_instruments: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mix: Option<AudioAsset>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stems: Vec<(String, AudioAsset)>,
}

impl AttributeUpdates {
    pub fn is_empty(&self) -> bool {
        *self == Self::default()
    }
}

fn check_bpm(bpm: f64) -> Result<f64, GatError> {
    if (MIN_BPM..=MAX_BPM).contains(&bpm) {
        Ok(bpm)
    } else {
        Err(GatError::BpmRange(bpm))
    }
}

fn push_unique(list: &mut Vec<String>, item: &str) {
    let item = item.trim().to_lowercase();
    if !item.is_empty() && !list.contains(&item) {
        list.push(item);
    }
}

impl GlobalAttributeTable {
    pub fn is_empty(&self) -> bool {
        *self == Self::default()
    }

    /// Returns a new table with `updates` applied; `self` is left untouched.
    ///
    /// Newly added instruments are listed first, most recent leading.
    pub fn apply_updates(&self, updates: &AttributeUpdates) -> Result<Self, GatError> {
        let mut next = if updates.reset {
            Self::default()
        } else {
            self.clone()
        };

        if let Some(bpm) = updates.bpm {
            next.bpm = Some(check_bpm(bpm)?);
        }
        if let Some(key) = &updates.key {
            next.key = Some(key.parse()?);
        }
        if let Some(genre) = &updates.genre {
            next.genre = Some(genre.trim().to_owned());
        }
        if let Some(mood) = &updates.mood {
            next.mood = Some(mood.trim().to_owned());
        }
        if let Some(description) = &updates.description {
            next.description = description.trim().to_owned();
        }
        if let Some(list) = &updates.instruments {
            next.instruments.clear();
            for item in list {
                push_unique(&mut next.instruments, item);
            }
        }
        if !updates.add_instruments.is_empty() {
            let mut merged = Vec::new();
            for item in &updates.add_instruments {
                push_unique(&mut merged, item);
            }
            for item in &next.instruments {
                push_unique(&mut merged, item);
            }
            next.instruments = merged;
        }
        for item in &updates.remove_instruments {
            let item = item.trim().to_lowercase();
            next.instruments.retain(|i| *i != item);
        }
        if let Some(mix) = &updates.mix {
            next.tracks.mix = Some(mix.clone());
        }
        for (name, asset) in &updates.stems {
            let name = name.trim().to_lowercase();
            if !STEM_NAMES.contains(&name.as_str()) && !next.instruments.contains(&name) {
                return Err(GatError::UnknownStem(name));
            }
            next.tracks.stems.insert(name, asset.clone());
        }
        Ok(next)
    }

    /// Lists track references that are not present in `store`.
    pub fn dangling_assets(&self, store: &AssetStore) -> Vec<String> {
        self.tracks
            .mix
            .iter()
            .chain(self.tracks.stems.values())
            .filter(|a| !store.contains(a))
            .map(|a| a.relative_path.clone())
            .collect()
    }

    /// One-paragraph summary of every set attribute, in a fixed field order.
    pub fn render_context(&self) -> String {
        let mut parts = Vec::new();
        if let Some(bpm) = self.bpm {
            parts.push(format!("bpm: {}", format_bpm(bpm)));
        }
        if let Some(key) = self.key {
            parts.push(format!("key: {key}"));
        }
        if let Some(genre) = &self.genre {
            parts.push(format!("genre: {genre}"));
        }
        if let Some(mood) = &self.mood {
            parts.push(format!("mood: {mood}"));
        }
        if !self.instruments.is_empty() {
            parts.push(format!("instruments: {}", self.instruments.join(", ")));
        }
        if !self.description.is_empty() {
            parts.push(format!("description: {}", self.description));
        }
        if parts.is_empty() {
            "no attributes recorded".to_owned()
        } else {
            parts.join("; ")
        }
    }
}

/// Whole tempos print without a fractional part.
pub fn format_bpm(bpm: f64) -> String {
    if bpm.fract() == 0.0 {
        format!("{}", bpm as i64)
    } else {
        format!("{bpm:.2}")
    }
}

/// Result of [`scale_bpm`]; `clamped` is set when the product left the
/// valid tempo range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledBpm {
    pub bpm: f64,
    pub clamped: bool,
}

pub fn scale_bpm(bpm: f64, speed_factor: f64) -> Result<ScaledBpm, GatError> {
    if speed_factor <= 0.0 || !speed_factor.is_finite() {
        return Err(GatError::NonPositiveSpeed(speed_factor));
    }
    if !(MIN_SPEED..=MAX_SPEED).contains(&speed_factor) {
        return Err(GatError::SpeedRange(speed_factor));
    }
    let raw = bpm * speed_factor;
    let scaled = raw.clamp(MIN_BPM, MAX_BPM);
    Ok(ScaledBpm {
        bpm: scaled,
        clamped: scaled != raw,
    })
}

/// Append-only per-turn snapshots of the table.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GatHistory {
    snapshots: Vec<(usize, GlobalAttributeTable)>,
}

impl GatHistory {
    pub fn push(&mut self, turn: usize, table: GlobalAttributeTable) -> Result<(), GatError> {
        if let Some((last, _)) = self.snapshots.last() {
            if turn <= *last {
                return Err(GatError::SnapshotOrder { last: *last, got: turn });
            }
        }
        self.snapshots.push((turn, table));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn snapshots(&self) -> &[(usize, GlobalAttributeTable)] {
        &self.snapshots
    }

    pub fn latest(&self) -> Option<&GlobalAttributeTable> {
        self.snapshots.last().map(|(_, t)| t)
    }
}
