//! The dialogue handler: per-turn preprocessing, the reason–act loop over
//! the tool registry, answer checking and the history / attribute-table
//! commit.

use std::path::Path;
use std::sync::{Arc, OnceLock};

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{AssetStore, AudioAsset, AudioError, IdMode};
use crate::backends::{BackendError, Backends};
use crate::gat::{AttributeUpdates, GatError, GatHistory, GlobalAttributeTable};
use crate::llm::{LanguageModel, LlmError, ScriptedPlanner};
use crate::protocol::{
    assemble_prompt, parse_llm_output, AgentOutput, AgentStep, Observation, PromptTemplate, ProtocolError,
    FORMAT_REMINDER,
};
use crate::tools::{dispatch, ToolConfig, ToolContext, ToolError, ToolRegistry, ERROR_PREFIX};

/// Replaces file references in an answer that do not name a stored loop.
pub const MISSING_FILE: &str = "<missing file>";

/// Limits on one turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    /// Model calls allowed per turn, including re-prompts after parse errors.
    pub max_iterations: usize,
    /// Consecutive unparsable outputs tolerated before the turn fails.
    pub parse_retries: usize,
    pub tools: ToolConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            max_iterations: 10,
            parse_retries: 2,
            tools: ToolConfig::default(),
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_iterations == 0 {
            return Err("max_iterations must be at least 1".into());
        }
        self.tools.validate()
    }
}

/// One executed tool call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub action: String,
    pub action_input: String,
    pub observation: String,
    pub is_error: bool,
}

/// A completed dialogue round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueTurn {
    pub query: String,
    pub attached_asset: Option<AudioAsset>,
    /// The query as shown to the model, with the upload line if any.
    pub model_input: String,
    pub answer: String,
    pub produced_assets: Vec<AudioAsset>,
    pub steps: Vec<StepRecord>,
}

/// Committed turns of one session, oldest first.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DialogueHistory {
    turns: Vec<DialogueTurn>,
}

impl DialogueHistory {
    pub fn turns(&self) -> &[DialogueTurn] {
        &self.turns
    }

    pub fn push(&mut self, turn: DialogueTurn) {
        self.turns.push(turn);
    }

    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }
}

/// Conversation state: history plus the attribute table and its per-turn
/// snapshots.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub history: DialogueHistory,
    pub gat: GlobalAttributeTable,
    pub gat_history: GatHistory,
}

impl Session {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            ..Self::default()
        }
    }
}

/// Progress of a chain within one turn.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChainState {
    /// Output of the most recent successful step.
    pub current_asset: Option<AudioAsset>,
    pub step_index: usize,
}

#[derive(Debug, Error)]
pub enum TurnError {
    #[error("empty query")]
    EmptyQuery,
    #[error("could not prepare the uploaded music: {0}")]
    Preprocess(#[source] ToolError),
    #[error("no answer within {limit} model calls")]
    IterationCap { limit: usize, steps: Vec<StepRecord> },
    #[error("language model failed: {source}")]
    Llm {
        #[source]
        source: LlmError,
        steps: Vec<StepRecord>,
    },
    #[error("model output unparsable after {attempts} attempt(s): {source}")]
    Parse {
        attempts: usize,
        #[source]
        source: ProtocolError,
        steps: Vec<StepRecord>,
    },
    #[error("prompt assembly failed: {0}")]
    Prompt(#[source] ProtocolError),
}

impl TurnError {
    /// Tool calls that ran before the failure. Their output files remain in
    /// the store, but the session is not changed.
    pub fn steps(&self) -> &[StepRecord] {
        match self {
            Self::IterationCap { steps, .. } | Self::Llm { steps, .. } | Self::Parse { steps, .. } => steps,
            _ => &[],
        }
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid engine configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

fn wav_reference() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[\w./\\-]*\.wav\b").expect("static regex"))
}

/// The conversational engine shared by all sessions.
pub struct Engine {
    registry: ToolRegistry,
    template: PromptTemplate,
    llm: Arc<dyn LanguageModel>,
    backends: Backends,
    store: Arc<AssetStore>,
    config: EngineConfig,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("store", &self.store)
            .field("backends", &self.backends)
            .field("config", &self.config)
            .finish()
    }
}

impl Engine {
    pub fn new(
        llm: Arc<dyn LanguageModel>,
        backends: Backends,
        store: Arc<AssetStore>,
        config: EngineConfig,
    ) -> Result<Self, EngineError> {
        config.validate().map_err(EngineError::Config)?;
        Ok(Self {
            registry: ToolRegistry::builtin(),
            template: PromptTemplate::default(),
            llm,
            backends,
            store,
            config,
        })
    }

    /// Scripted planner, mock backends and a seeded store under `root`:
    /// fully offline and deterministic for a given seed.
    pub fn offline(root: &Path, seed: u64, config: EngineConfig) -> Result<Self, EngineError> {
        let store = Arc::new(AssetStore::open(root, IdMode::Seeded(seed))?);
        let planner = Arc::new(ScriptedPlanner::builtin(&ToolRegistry::builtin()));
        Self::new(planner, Backends::mock(seed), store, config)
    }

    pub fn with_template(mut self, template: PromptTemplate) -> Self {
        self.template = template;
        self
    }

    pub fn with_registry(mut self, registry: ToolRegistry) -> Self {
        self.registry = registry;
        self
    }

    pub fn store(&self) -> &Arc<AssetStore> {
        &self.store
    }

    pub fn registry(&self) -> &ToolRegistry {
        &self.registry
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    /// Exact lookup of a `music/<id>.wav` reference in the store.
    pub fn resolve_asset_reference(&self, raw: &str) -> Result<AudioAsset, ToolError> {
        self.store.resolve(raw.trim()).map_err(|e| match e {
            AudioError::UnknownAsset(p) => ToolError::NonexistentFile(p),
            other => ToolError::Audio(other),
        })
    }

    fn context<'a>(&'a self, gat: &'a GlobalAttributeTable) -> ToolContext<'a> {
        ToolContext {
            store: &self.store,
            backends: &self.backends,
            llm: self.llm.as_ref(),
            config: &self.config.tools,
            gat,
        }
    }

    /// Captions an upload and makes it the current loop.
    fn preprocess(
        &self,
        query: &str,
        attached: Option<&AudioAsset>,
        gat: &GlobalAttributeTable,
    ) -> Result<(String, GlobalAttributeTable), ToolError> {
        let Some(asset) = attached else {
            return Ok((query.to_owned(), gat.clone()));
        };
        let asset = self.resolve_asset_reference(&asset.relative_path)?;
        let buf = self.store.load(&asset)?;
        let caption = self
            .backends
            .caption_audio(&buf)
            .map_err(|source| ToolError::Backend { stage: "captioning", source })?;
        let updates = AttributeUpdates {
            mix: Some(asset.clone()),
            description: gat.description.is_empty().then(|| caption.clone()),
            ..AttributeUpdates::default()
        };
        let gat = gat.apply_updates(&updates)?;
        let input = format!("Human provided music {} described as: {caption}\n{query}", asset.relative_path);
        Ok((input, gat))
    }

    /// Replaces every `.wav` reference that is not a stored loop.
    fn guard_answer(&self, answer: &str) -> String {
        wav_reference()
            .replace_all(answer, |c: &regex::Captures<'_>| {
                let path = &c[0];
                if self.store.resolve(path).is_ok() {
                    path.to_owned()
                } else {
                    tracing::warn!(path, "answer referenced a file that does not exist");
                    MISSING_FILE.to_owned()
                }
            })
            .into_owned()
    }

    /// Runs one dialogue round.
    ///
    /// On success the turn is appended to the history and the attribute
    /// table is replaced by its updated copy; on error `session` is left
    /// exactly as it was.
    pub fn handle_query(
        &self,
        session: &mut Session,
        query: &str,
        attached: Option<&AudioAsset>,
    ) -> Result<DialogueTurn, TurnError> {
        let query = query.trim();
        if query.is_empty() {
            return Err(TurnError::EmptyQuery);
        }
        let (model_input, mut gat) = self
            .preprocess(query, attached, &session.gat)
            .map_err(TurnError::Preprocess)?;

        let mut scratchpad: Vec<(AgentStep, Observation)> = Vec::new();
        let mut steps: Vec<StepRecord> = Vec::new();
        let mut produced: Vec<AudioAsset> = Vec::new();
        let mut chain = ChainState::default();
        let mut parse_failures = 0usize;

        let answer = 'turn: {
            for _ in 0..self.config.max_iterations {
                let input = if parse_failures > 0 {
                    format!("{model_input}\n{FORMAT_REMINDER}")
                } else {
                    model_input.clone()
                };
                let prompt = assemble_prompt(
                    &self.template,
                    self.registry.specs(),
                    &session.history,
                    &input,
                    &scratchpad,
                )
                .map_err(TurnError::Prompt)?;
                let raw = match self.llm.complete(&prompt) {
                    Ok(raw) => raw,
                    Err(source) => return Err(TurnError::Llm { source, steps }),
                };
                let step = match parse_llm_output(&raw) {
                    Ok(AgentOutput::Final(f)) => break 'turn f.response,
                    Ok(AgentOutput::Step(step)) => step,
                    Err(source) => {
                        parse_failures += 1;
                        tracing::debug!(attempt = parse_failures, "unparsable model output");
                        if parse_failures > self.config.parse_retries {
                            return Err(TurnError::Parse {
                                attempts: parse_failures,
                                source,
                                steps,
                            });
                        }
                        continue;
                    }
                };
                parse_failures = 0;

                let result = dispatch(&self.registry, &step.action, &step.action_input, &self.context(&gat));
                let (observation, is_error) = if result.is_error {
                    (result.observation_text, true)
                } else {
                    match gat.apply_updates(&result.gat_updates) {
                        Ok(next) => {
                            gat = next;
                            if let Some(asset) = result.produced_asset {
                                chain.current_asset = Some(asset.clone());
                                produced.push(asset);
                            }
                            (result.observation_text, false)
                        }
                        Err(e) => (format!("{ERROR_PREFIX}{}", gat_error_text(&e)), true),
                    }
                };
                chain.step_index += 1;
                tracing::debug!(step = chain.step_index, action = %step.action, is_error, "tool step");
                steps.push(StepRecord {
                    action: step.action.clone(),
                    action_input: step.action_input.clone(),
                    observation: observation.clone(),
                    is_error,
                });
                scratchpad.push((step, Observation::new(observation)));
            }
            return Err(TurnError::IterationCap {
                limit: self.config.max_iterations,
                steps,
            });
        };

        let turn = DialogueTurn {
            query: query.to_owned(),
            attached_asset: attached.cloned(),
            model_input,
            answer: self.guard_answer(&answer),
            produced_assets: produced,
            steps,
        };
        let turn_index = session.history.len();
        // The snapshot order is guaranteed by construction; a failure here
        // would mean the history was edited behind our back.
        if let Err(e) = session.gat_history.push(turn_index, gat.clone()) {
            tracing::error!("attribute snapshot rejected: {e}");
        }
        session.gat = gat;
        session.history.push(turn.clone());
        Ok(turn)
    }
}

fn gat_error_text(e: &GatError) -> String {
    format!("the result could not be recorded: {e}")
}
