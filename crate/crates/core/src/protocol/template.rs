use std::fs;
use std::path::Path;

use super::{AgentStep, Observation, ProtocolError, AI_PREFIX};
use crate::handler::DialogueHistory;
use crate::tools::ToolSpec;

/// Most recent dialogue turns rendered into `{chat_history}`.
pub const HISTORY_WINDOW: usize = 20;

/// Marker the model is asked to continue after.
pub const THOUGHT_PROMPT: &str = "Thought: Do I need to use a tool? ";

/// Line appended when the model's previous output could not be parsed.
pub const FORMAT_REMINDER: &str = "You MUST strictly follow the format.";

pub const PREFIX_FILE: &str = "prompt_prefix.txt";
pub const FORMAT_FILE: &str = "prompt_format.txt";
pub const SUFFIX_FILE: &str = "prompt_suffix.txt";

/// The three system-principle texts, kept as data with their `{…}` slots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub system_prefix: String,
    pub system_format: String,
    pub system_suffix: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            system_prefix: include_str!("../../data/prompt_prefix.txt").to_owned(),
            system_format: include_str!("../../data/prompt_format.txt").to_owned(),
            system_suffix: include_str!("../../data/prompt_suffix.txt").to_owned(),
        }
    }
}

impl PromptTemplate {
    /// Reads the three template files from `dir`.
    pub fn load(dir: &Path) -> Result<Self, ProtocolError> {
        let read = |name: &str| {
            fs::read_to_string(dir.join(name)).map_err(|e| ProtocolError::TemplateIo {
                file: name.to_owned(),
                detail: e.to_string(),
            })
        };
        Ok(Self {
            system_prefix: read(PREFIX_FILE)?,
            system_format: read(FORMAT_FILE)?,
            system_suffix: read(SUFFIX_FILE)?,
        })
    }
}

/// Single-pass `{name}` substitution. Substituted values are not rescanned,
/// so braces in user text are left alone.
fn fill(template: &str, vars: &[(&str, &str)]) -> Result<String, ProtocolError> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let close = after
            .find('}')
            .ok_or_else(|| ProtocolError::UnresolvedPlaceholder(after.chars().take(24).collect()))?;
        let name = &after[..close];
        let value = vars
            .iter()
            .find(|(k, _)| *k == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| ProtocolError::UnresolvedPlaceholder(name.to_owned()))?;
        out.push_str(value);
        rest = &after[close + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

/// `Human:` / `AI:` lines for the newest [`HISTORY_WINDOW`] turns.
pub fn render_history(history: &DialogueHistory) -> String {
    let turns = history.turns();
    let start = turns.len().saturating_sub(HISTORY_WINDOW);
    turns[start..]
        .iter()
        .map(|t| format!("Human: {}\n{AI_PREFIX}: {}", t.model_input, t.answer))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Continuation text following the final `Thought: Do I need to use a tool? `.
pub fn render_scratchpad(scratchpad: &[(AgentStep, Observation)]) -> String {
    scratchpad
        .iter()
        .map(|(step, obs)| {
            format!(
                "Yes\nAction: {}\nAction Input: {}\nObservation: {}\n{THOUGHT_PROMPT}",
                step.action, step.action_input, obs.text
            )
        })
        .collect()
}

/// Builds the full model prompt: prefix, tool list, format block and suffix.
pub fn assemble_prompt(
    template: &PromptTemplate,
    tools: &[ToolSpec],
    history: &DialogueHistory,
    input: &str,
    scratchpad: &[(AgentStep, Observation)],
) -> Result<String, ProtocolError> {
    if tools.is_empty() {
        return Err(ProtocolError::NoTools);
    }
    let tool_names = tools
        .iter()
        .map(|t| t.name.as_str())
        .collect::<Vec<_>>()
        .join(", ");
    let tool_lines = tools
        .iter()
        .map(|t| format!("> {}: {}", t.name, t.description))
        .collect::<Vec<_>>()
        .join("\n");
    let chat_history = render_history(history);
    let agent_scratchpad = render_scratchpad(scratchpad);
    let vars = [
        ("tool_names", tool_names.as_str()),
        ("ai_prefix", AI_PREFIX),
        ("chat_history", chat_history.as_str()),
        ("input", input),
        ("agent_scratchpad", agent_scratchpad.as_str()),
    ];

    let prefix = fill(&template.system_prefix, &vars)?;
    let format = fill(&template.system_format, &vars)?;
    let suffix = fill(&template.system_suffix, &vars)?;
    Ok(format!(
        "{}\n\n{}\n\n{}\n\n{}",
        prefix.trim_end(),
        tool_lines,
        format.trim_end(),
        suffix
    ))
}
