//! The tool registry and dispatch: parses a model's action input, resolves
//! asset references and runs one of the twelve music tasks.

mod music;
mod vocab;

pub use music::{
    add_sound_effect, add_track, caption, drum_pattern_to_music, impression_to_music, inpaint,
    music_variation, pitch_shift, remove_track, stylistic_rearrangement, text_to_music,
    time_stretch, SUPPORTED_EFFECTS,
};
pub use vocab::{extract_attributes, extract_instrument, Vocabulary};

use std::collections::HashSet;
use std::panic::{catch_unwind, AssertUnwindSafe};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{AssetStore, AudioAsset, AudioError};
use crate::backends::{BackendError, Backends};
use crate::dsp::DspError;
use crate::gat::{AttributeUpdates, GatError, GlobalAttributeTable};
use crate::llm::{LanguageModel, LlmError};
use crate::protocol::{split_args, ProtocolError};

const BUILTIN_TOOLS: &str = include_str!("../../data/tools.toml");

/// Stable identifier binding a registry entry to its implementation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolId {
    TextToMusic,
    DrumPatternToMusic,
    ImpressionToMusic,
    StylisticRearrangement,
    MusicVariation,
    AddTrack,
    RemoveTrack,
    Inpaint,
    AddSoundEffect,
    PitchShift,
    TimeStretch,
    Caption,
}

impl ToolId {
    pub const ALL: [ToolId; 12] = [
        ToolId::TextToMusic,
        ToolId::DrumPatternToMusic,
        ToolId::ImpressionToMusic,
        ToolId::StylisticRearrangement,
        ToolId::MusicVariation,
        ToolId::AddTrack,
        ToolId::RemoveTrack,
        ToolId::Inpaint,
        ToolId::AddSoundEffect,
        ToolId::PitchShift,
        ToolId::TimeStretch,
        ToolId::Caption,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ToolId::TextToMusic => "text_to_music",
            ToolId::DrumPatternToMusic => "drum_pattern_to_music",
            ToolId::ImpressionToMusic => "impression_to_music",
            ToolId::StylisticRearrangement => "stylistic_rearrangement",
            ToolId::MusicVariation => "music_variation",
            ToolId::AddTrack => "add_track",
            ToolId::RemoveTrack => "remove_track",
            ToolId::Inpaint => "inpaint",
            ToolId::AddSoundEffect => "add_sound_effect",
            ToolId::PitchShift => "pitch_shift",
            ToolId::TimeStretch => "time_stretch",
            ToolId::Caption => "caption",
        }
    }

    /// Positional parameters with the labels used in arity messages.
    pub fn params(&self) -> &'static [(ParamKind, &'static str)] {
        use ParamKind::*;
        match self {
            ToolId::TextToMusic => &[(FreeText, "text description")],
            ToolId::DrumPatternToMusic
            | ToolId::StylisticRearrangement
            | ToolId::AddTrack => &[(AssetPath, "music_filename"), (FreeText, "text description")],
            ToolId::ImpressionToMusic => &[(FreeText, "text description"), (FreeText, "title")],
            ToolId::MusicVariation | ToolId::Caption => &[(AssetPath, "music_filename")],
            ToolId::RemoveTrack => &[
                (AssetPath, "music_filename"),
                (StemName, "track name"),
                (Mode, "mode ('extract' or 'remove')"),
            ],
            ToolId::Inpaint => &[
                (AssetPath, "music_filename"),
                (Seconds, "start time in seconds"),
                (Seconds, "end time in seconds"),
            ],
            ToolId::AddSoundEffect => &[(AssetPath, "music_filename"), (FreeText, "original user message")],
            ToolId::PitchShift => &[(AssetPath, "music_filename"), (Semitones, "pitch shift value")],
            ToolId::TimeStretch => &[(AssetPath, "music_filename"), (Ratio, "time stretch value")],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    AssetPath,
    FreeText,
    StemName,
    Mode,
    Seconds,
    Semitones,
    Ratio,
}

/// A registry entry: what the model sees plus the argument shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ToolSpec {
    pub id: ToolId,
    pub name: String,
    pub description: String,
    pub arity: usize,
    pub param_kinds: Vec<ParamKind>,
}

impl ToolSpec {
    /// Human-readable argument list, e.g. `music_filename, text description`.
    pub fn input_format(&self) -> String {
        self.id
            .params()
            .iter()
            .map(|(_, label)| *label)
            .collect::<Vec<_>>()
            .join(", ")
    }
}

#[derive(Debug, Deserialize)]
struct RegistryFile {
    tool: Vec<RegistryEntry>,
}

#[derive(Debug, Deserialize)]
struct RegistryEntry {
    id: ToolId,
    name: String,
    description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("cannot parse tool list: {0}")]
    Parse(String),
    #[error("duplicate tool {0:?}")]
    Duplicate(String),
    #[error("tool {0} is missing from the tool list")]
    Missing(&'static str),
    #[error("tool {0:?} has an empty name or description")]
    Empty(String),
}

/// The twelve tools, in presentation order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolRegistry {
    specs: Vec<ToolSpec>,
}

impl ToolRegistry {
    /// Parses a `[[tool]]` list; every [`ToolId`] must appear exactly once.
    pub fn from_toml(text: &str) -> Result<Self, RegistryError> {
        let file: RegistryFile = toml::from_str(text).map_err(|e| RegistryError::Parse(e.to_string()))?;
        let mut ids = HashSet::new();
        let mut names = HashSet::new();
        let mut specs = Vec::with_capacity(file.tool.len());
        for entry in file.tool {
            if entry.name.trim().is_empty() || entry.description.trim().is_empty() {
                return Err(RegistryError::Empty(entry.id.as_str().to_owned()));
            }
            if !ids.insert(entry.id) {
                return Err(RegistryError::Duplicate(entry.id.as_str().to_owned()));
            }
            if !names.insert(entry.name.clone()) {
                return Err(RegistryError::Duplicate(entry.name));
            }
            let params = entry.id.params();
            specs.push(ToolSpec {
                id: entry.id,
                name: entry.name,
                description: entry.description,
                arity: params.len(),
                param_kinds: params.iter().map(|(k, _)| *k).collect(),
            });
        }
        if let Some(missing) = ToolId::ALL.iter().find(|id| !ids.contains(id)) {
            return Err(RegistryError::Missing(missing.as_str()));
        }
        Ok(Self { specs })
    }

    pub fn builtin() -> Self {
        Self::from_toml(BUILTIN_TOOLS).expect("built-in tool list is valid")
    }

    pub fn specs(&self) -> &[ToolSpec] {
        &self.specs
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    /// Exact match on the name the model emits.
    pub fn by_name(&self, name: &str) -> Option<&ToolSpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    pub fn by_id(&self, id: ToolId) -> &ToolSpec {
        self.specs.iter().find(|s| s.id == id).expect("registry holds every tool id")
    }

    /// Finds a tool by id string or exact name.
    pub fn lookup(&self, id_or_name: &str) -> Option<&ToolSpec> {
        self.specs
            .iter()
            .find(|s| s.id.as_str() == id_or_name || s.name == id_or_name)
    }
}

impl Default for ToolRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

/// Default parameters for the sound-effect tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EffectDefaults {
    pub reverb_room_size: f64,
    pub reverb_wet: f64,
    pub highpass_hz: f64,
    pub lowpass_hz: f64,
    pub chorus_rate_hz: f64,
    pub chorus_depth_ms: f64,
}

impl Default for EffectDefaults {
    fn default() -> Self {
        Self {
            reverb_room_size: 0.5,
            reverb_wet: 0.33,
            highpass_hz: 800.0,
            lowpass_hz: 2000.0,
            chorus_rate_hz: 1.5,
            chorus_depth_ms: 7.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToolConfig {
    /// Length of freshly generated loops.
    pub duration_seconds: f64,
    /// Minimum similarity score for an add-track candidate.
    pub similarity_threshold: f64,
    /// Continuation attempts before add-track gives up.
    pub max_retries: u32,
    pub effects: EffectDefaults,
}

impl Default for ToolConfig {
    fn default() -> Self {
        Self {
            duration_seconds: crate::backends::DEFAULT_DURATION_SECONDS,
            similarity_threshold: 0.3,
            max_retries: 4,
            effects: EffectDefaults::default(),
        }
    }
}

impl ToolConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.duration_seconds.is_finite() && self.duration_seconds > 0.0) {
            return Err(format!("duration_seconds must be positive, got {}", self.duration_seconds));
        }
        if !(0.0..=1.0).contains(&self.similarity_threshold) {
            return Err(format!(
                "similarity_threshold must be in [0, 1], got {}",
                self.similarity_threshold
            ));
        }
        if self.max_retries == 0 {
            return Err("max_retries must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ToolError {
    #[error("unknown tool: {0}")]
    UnknownTool(String),
    #[error("{tool} expects {expected} comma-separated argument(s) ({format}), got {found}")]
    Arity {
        tool: String,
        expected: usize,
        found: usize,
        format: String,
    },
    #[error("nonexistent file: {0}")]
    NonexistentFile(String),
    #[error("{0}")]
    Invalid(String),
    #[error("{stage} failed: {source}")]
    Backend {
        stage: &'static str,
        #[source]
        source: BackendError,
    },
    #[error("{stage} failed: {source}")]
    Llm {
        stage: &'static str,
        #[source]
        source: LlmError,
    },
    #[error("no candidate passed the similarity gate after {attempts} attempt(s): best score {best:.3} < threshold {threshold:.2}")]
    GateFailed { attempts: u32, best: f64, threshold: f64 },
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Gat(#[from] GatError),
}

/// Everything a tool may read while running.
#[derive(Clone, Copy)]
pub struct ToolContext<'a> {
    pub store: &'a AssetStore,
    pub backends: &'a Backends,
    pub llm: &'a dyn LanguageModel,
    pub config: &'a ToolConfig,
    /// The attribute table as of the previous step in this turn.
    pub gat: &'a GlobalAttributeTable,
}

impl ToolContext<'_> {
    /// Exact-path lookup of an asset named by the model.
    pub fn resolve(&self, raw: &str) -> Result<AudioAsset, ToolError> {
        let path = raw.trim();
        self.store.resolve(path).map_err(|e| match e {
            AudioError::UnknownAsset(p) => ToolError::NonexistentFile(p),
            other => ToolError::Audio(other),
        })
    }
}

/// Outcome of one tool call, as fed back to the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResult {
    pub observation_text: String,
    pub produced_asset: Option<AudioAsset>,
    pub gat_updates: AttributeUpdates,
    pub is_error: bool,
}

/// Prefix of every failed tool's observation.
pub const ERROR_PREFIX: &str = "Error: ";

impl ToolResult {
    pub fn ok(observation_text: String, produced_asset: Option<AudioAsset>, gat_updates: AttributeUpdates) -> Self {
        Self {
            observation_text,
            produced_asset,
            gat_updates,
            is_error: false,
        }
    }

    pub fn error(err: &ToolError) -> Self {
        Self {
            observation_text: format!("{ERROR_PREFIX}{err}"),
            produced_asset: None,
            gat_updates: AttributeUpdates::default(),
            is_error: true,
        }
    }
}

fn run(spec: &ToolSpec, args: &[String], ctx: &ToolContext<'_>) -> Result<ToolResult, ToolError> {
    let a = |i: usize| args[i].as_str();
    match spec.id {
        ToolId::TextToMusic => text_to_music(ctx, a(0)),
        ToolId::DrumPatternToMusic => drum_pattern_to_music(ctx, a(0), a(1)),
        ToolId::ImpressionToMusic => impression_to_music(ctx, a(1), a(0)),
        ToolId::StylisticRearrangement => stylistic_rearrangement(ctx, a(0), a(1)),
        ToolId::MusicVariation => music_variation(ctx, a(0)),
        ToolId::AddTrack => add_track(ctx, a(0), a(1)),
        ToolId::RemoveTrack => remove_track(ctx, a(0), a(1), a(2)),
        ToolId::Inpaint => inpaint(ctx, a(0), a(1), a(2)),
        ToolId::AddSoundEffect => add_sound_effect(ctx, a(0), a(1)),
        ToolId::PitchShift => pitch_shift(ctx, a(0), a(1)),
        ToolId::TimeStretch => time_stretch(ctx, a(0), a(1)),
        ToolId::Caption => caption(ctx, a(0)),
    }
}

/// Runs the tool named `action` on `action_input`.
///
/// Never fails and never panics: unknown tools, malformed arguments,
/// missing files and backend failures all come back as an error
/// observation the model can react to.
pub fn dispatch(registry: &ToolRegistry, action: &str, action_input: &str, ctx: &ToolContext<'_>) -> ToolResult {
    let Some(spec) = registry.by_name(action) else {
        return ToolResult::error(&ToolError::UnknownTool(action.to_owned()));
    };
    let args = match split_args(action_input, spec.arity) {
        Ok(args) => args,
        Err(ProtocolError::Arity { expected, found }) => {
            return ToolResult::error(&ToolError::Arity {
                tool: spec.name.clone(),
                expected,
                found,
                format: spec.input_format(),
            })
        }
        Err(e) => return ToolResult::error(&ToolError::Invalid(e.to_string())),
    };
    match catch_unwind(AssertUnwindSafe(|| run(spec, &args, ctx))) {
        Ok(Ok(result)) => result,
        Ok(Err(e)) => {
            tracing::debug!(tool = spec.id.as_str(), "tool failed: {e}");
            ToolResult::error(&e)
        }
        Err(_) => {
            tracing::error!(tool = spec.id.as_str(), "tool panicked");
            ToolResult::error(&ToolError::Invalid(format!("{} failed unexpectedly", spec.name)))
        }
    }
}
