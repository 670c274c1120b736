//! The text protocol between the engine and the language model: prompt
//! assembly from the system principles and parsing of
//! `Thought:` / `Action:` / `Action Input:` outputs.

mod template;

pub use template::{
    assemble_prompt, render_history, render_scratchpad, PromptTemplate, FORMAT_REMINDER,
    HISTORY_WINDOW, THOUGHT_PROMPT,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Prefix of the line carrying the model's answer to the human.
pub const AI_PREFIX: &str = "AI";

const THOUGHT_MARKER: &str = "Thought:";
const ACTION_MARKER: &str = "Action:";
const ACTION_INPUT_MARKER: &str = "Action Input:";
const OBSERVATION_MARKER: &str = "Observation:";
const AI_MARKER: &str = "AI:";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("unresolved placeholder {{{0}}}")]
    UnresolvedPlaceholder(String),
    #[error("prompt needs at least one tool")]
    NoTools,
    #[error("cannot read template {file}: {detail}")]
    TemplateIo { file: String, detail: String },
    #[error("could not parse model output ({reason}): {raw:?}")]
    Parse { reason: &'static str, raw: String },
    #[error("expected {expected} comma-separated arguments, found {found}")]
    Arity { expected: usize, found: usize },
}

/// A tool request parsed from model output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentStep {
    pub thought: String,
    pub action: String,
    pub action_input: String,
}

/// A final answer to the human.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentFinal {
    pub thought: String,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AgentOutput {
    Step(AgentStep),
    Final(AgentFinal),
}

/// Text rendering of a tool result, as fed back to the model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub text: String,
}

impl Observation {
    pub fn new(text: impl Into<String>) -> Self {
        Self { text: text.into() }
    }
}

impl AgentStep {
    /// Canonical three-line rendering.
    pub fn render(&self) -> String {
        format!(
            "{THOUGHT_MARKER} {}\n{ACTION_MARKER} {}\n{ACTION_INPUT_MARKER} {}",
            self.thought, self.action, self.action_input
        )
    }
}

impl AgentFinal {
    pub fn render(&self) -> String {
        format!("{THOUGHT_MARKER} {}\n{AI_MARKER} {}", self.thought, self.response)
    }
}

fn marker_rest<'a>(line: &'a str, marker: &str) -> Option<&'a str> {
    line.trim_start().strip_prefix(marker)
}

fn thought_of(lines: &[&str]) -> String {
    let joined = lines.join("\n");
    let trimmed = joined.trim();
    trimmed
        .strip_prefix(THOUGHT_MARKER)
        .unwrap_or(trimmed)
        .trim()
        .to_owned()
}

fn declines_tool(thought: &str) -> bool {
    thought == "No" || thought.ends_with("? No")
}

/// Parses one model completion.
///
/// An `Action:` line directly followed by an `Action Input:` line yields a
/// step; the input runs to the end of the text or the next `Observation:`
/// line. Otherwise an `AI:` line yields a final answer made of everything
/// after the prefix. Markers are matched case-sensitively at line starts.
pub fn parse_llm_output(text: &str) -> Result<AgentOutput, ProtocolError> {
    let err = |reason| ProtocolError::Parse {
        reason,
        raw: text.to_owned(),
    };
    let lines: Vec<&str> = text.lines().collect();
    let action_at = lines.iter().position(|l| marker_rest(l, ACTION_MARKER).is_some());
    let ai_at = lines.iter().position(|l| marker_rest(l, AI_MARKER).is_some());

    if let Some(a) = action_at.filter(|&a| ai_at.is_none_or(|f| a < f)) {
        let thought = thought_of(&lines[..a]);
        if !declines_tool(&thought) {
            let action = marker_rest(lines[a], ACTION_MARKER).unwrap_or_default().trim();
            if action.is_empty() {
                return Err(err("empty Action line"));
            }
            let first_input = lines
                .get(a + 1)
                .and_then(|l| marker_rest(l, ACTION_INPUT_MARKER))
                .ok_or_else(|| err("Action without a following Action Input line"))?;
            let mut input = vec![first_input];
            input.extend(
                lines[a + 2..]
                    .iter()
                    .take_while(|l| marker_rest(l, OBSERVATION_MARKER).is_none()),
            );
            return Ok(AgentOutput::Step(AgentStep {
                thought,
                action: action.to_owned(),
                action_input: input.join("\n").trim().to_owned(),
            }));
        }
    }

    if let Some(f) = ai_at {
        let mut body = vec![marker_rest(lines[f], AI_MARKER).unwrap_or_default()];
        body.extend(&lines[f + 1..]);
        let response = body.join("\n").trim().to_owned();
        if response.is_empty() {
            return Err(err("empty response after AI prefix"));
        }
        return Ok(AgentOutput::Final(AgentFinal {
            thought: thought_of(&lines[..f]),
            response,
        }));
    }

    Err(err("neither an Action nor an AI line found"))
}

/// Splits a tool input on its first `arity - 1` commas, trimming each part.
pub fn split_args(raw: &str, arity: usize) -> Result<Vec<String>, ProtocolError> {
    let arity = arity.max(1);
    let parts: Vec<String> = raw.splitn(arity, ',').map(|p| p.trim().to_owned()).collect();
    if parts.len() != arity {
        return Err(ProtocolError::Arity {
            expected: arity,
            found: parts.len(),
        });
    }
    Ok(parts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_tool_step() {
        let out = parse_llm_output(
            "Thought: Do I need to use a tool? Yes\nAction: Generate music from user input text.\nAction Input: smooth rock music with guitar",
        )
        .unwrap();
        assert_eq!(
            out,
            AgentOutput::Step(AgentStep {
                thought: "Do I need to use a tool? Yes".into(),
                action: "Generate music from user input text.".into(),
                action_input: "smooth rock music with guitar".into(),
            })
        );
    }

    #[test]
    fn parses_final_answer() {
        let out = parse_llm_output(
            "Thought: Do I need to use a tool? No\nAI: Here is your loop: music/c540d5a6.wav",
        )
        .unwrap();
        let AgentOutput::Final(f) = out else { panic!("expected final") };
        assert_eq!(f.response, "Here is your loop: music/c540d5a6.wav");
    }

    #[test]
    fn rejects_gibberish() {
        let err = parse_llm_output("gibberish with no markers").unwrap_err();
        assert!(matches!(err, ProtocolError::Parse { ref raw, .. } if raw == "gibberish with no markers"));
    }

    #[test]
    fn continuation_without_thought_marker() {
        let out = parse_llm_output("Yes\nAction: X\nAction Input: a, b").unwrap();
        assert!(matches!(out, AgentOutput::Step(s) if s.action == "X" && s.action_input == "a, b"));
        let out = parse_llm_output("No\nAI: done").unwrap();
        assert!(matches!(out, AgentOutput::Final(f) if f.response == "done"));
    }

    #[test]
    fn action_input_stops_at_observation() {
        let out = parse_llm_output(
            "Thought: Do I need to use a tool? Yes\nAction: T\nAction Input: line one\nline two\nObservation: made up",
        )
        .unwrap();
        let AgentOutput::Step(s) = out else { panic!() };
        assert_eq!(s.action_input, "line one\nline two");
    }

    #[test]
    fn markers_are_case_sensitive() {
        assert!(parse_llm_output("action: T\naction input: x").is_err());
        assert!(parse_llm_output("ai: hello").is_err());
    }

    #[test]
    fn action_missing_input_is_an_error() {
        assert!(parse_llm_output("Thought: Do I need to use a tool? Yes\nAction: T").is_err());
        assert!(parse_llm_output("Action: \nAction Input: x").is_err());
    }

    #[test]
    fn declined_thought_with_answer_is_final() {
        let out = parse_llm_output(
            "Thought: Do I need to use a tool? No\nAI: Use the format\nAction: like this",
        )
        .unwrap();
        assert!(matches!(out, AgentOutput::Final(f) if f.response == "Use the format\nAction: like this"));
    }

    #[test]
    fn split_args_examples() {
        assert_eq!(
            split_args("music/ab12cd34.wav, add a saxophone, with vibrato", 2).unwrap(),
            ["music/ab12cd34.wav", "add a saxophone, with vibrato"]
        );
        assert_eq!(
            split_args("music/ab12cd34.wav, drums, remove", 3).unwrap(),
            ["music/ab12cd34.wav", "drums", "remove"]
        );
        assert_eq!(
            split_args("no commas here", 2),
            Err(ProtocolError::Arity { expected: 2, found: 1 })
        );
        assert_eq!(split_args("  music/ab12cd34.wav ", 1).unwrap(), ["music/ab12cd34.wav"]);
    }
}
