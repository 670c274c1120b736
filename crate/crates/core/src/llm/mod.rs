//! The language-model boundary: a completion interface, the impression
//! translation call, a deterministic scripted planner and a client for
//! chat-completion HTTP services.

mod planner;
mod remote;

pub use planner::{PlannerRule, PlannerScript, PlannerStep, ScriptedPlanner};
pub use remote::{ChatClientConfig, ChatCompletionClient};

use thiserror::Error;

/// Translation prompt sent by [`translate_impression`]; `{title}` is
/// replaced by the requested title.
pub const IMPRESSION_PROMPT: &str = include_str!("../../data/impression_prompt.txt");

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("empty prompt")]
    EmptyPrompt,
    #[error("model returned an empty completion")]
    EmptyCompletion,
    #[error("{0}")]
    Precondition(String),
    #[error("transport error after {attempts} attempt(s): {detail}")]
    Transport { attempts: usize, detail: String },
    #[error("invalid planner script: {0}")]
    Script(String),
}

/// A text-completion model.
pub trait LanguageModel: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, LlmError>;
}

/// First line of [`IMPRESSION_PROMPT`], used to recognise translation
/// requests.
pub fn impression_prompt_header() -> &'static str {
    IMPRESSION_PROMPT.lines().next().unwrap_or_default()
}

pub fn impression_prompt(title: &str) -> String {
    IMPRESSION_PROMPT.replace("{title}", title.trim())
}

/// Asks the model for a musical-feature description of a song title.
pub fn translate_impression(llm: &dyn LanguageModel, title: &str) -> Result<String, LlmError> {
    if title.trim().is_empty() {
        return Err(LlmError::Precondition("impression title is empty".into()));
    }
    let raw = llm.complete(&impression_prompt(title))?;
    let line = raw
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .unwrap_or_default();
    let line = line.strip_prefix("Description:").unwrap_or(line);
    let desc = line.trim().trim_matches('"').trim();
    if desc.is_empty() {
        return Err(LlmError::EmptyCompletion);
    }
    Ok(desc.to_owned())
}
