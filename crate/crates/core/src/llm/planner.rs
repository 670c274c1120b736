//! Deterministic planner standing in for the language model.
//!
//! The planner is stateless: every call re-reads the prompt it is given,
//! takes the user input after `New input:`, counts the observations already
//! in the scratchpad and emits the next step of the first rule whose pattern
//! matches. Chains therefore advance exactly one tool per model call, and
//! one planner can serve any number of sessions.

use std::collections::BTreeMap;
use std::path::Path;

use regex::Regex;
use serde::Deserialize;

use super::{impression_prompt_header, LanguageModel, LlmError};
use crate::protocol::{AgentFinal, AgentStep, THOUGHT_PROMPT};
use crate::tools::ToolRegistry;

const DEFAULT_SCRIPT: &str = include_str!("../../data/planner.toml");

const INPUT_MARKER: &str = "\nNew input: ";
const OBSERVATION_MARKER: &str = "Observation: ";
const UPLOAD_MARKER: &str = "Human provided music ";
const ERROR_MARKER: &str = "Error:";
const AI_LINE: &str = "AI: ";

/// Variables available to step inputs and final templates. Named capture
/// groups of the rule's pattern are available as `${name}`.
const VARIABLES: [&str; 6] = ["INPUT", "QUERY", "LAST_ASSET", "NEW_ASSET", "LAST_OBSERVATION", "ERROR"];

fn asset_regex() -> Regex {
    Regex::new(r"music/[0-9a-f]{8}\.wav").expect("static regex")
}

/// Any file reference the human typed, valid or not, so the tool can judge it.
fn typed_file_regex() -> Regex {
    Regex::new(r"[\w./\\-]*\.wav\b").expect("static regex")
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct PlannerStep {
    /// Tool id or exact tool name.
    pub tool: String,
    pub input: String,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct PlannerRule {
    pub pattern: String,
    #[serde(default, rename = "step")]
    pub steps: Vec<PlannerStep>,
    #[serde(rename = "final")]
    pub final_template: String,
}

/// Planner rules and canned responses, read from TOML.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct PlannerScript {
    #[serde(default = "default_fallback")]
    pub fallback: String,
    #[serde(default = "default_failure")]
    pub failure: String,
    #[serde(default = "default_no_asset")]
    pub no_asset: String,
    #[serde(default = "default_impression_fallback")]
    pub impression_fallback: String,
    /// Title → description answers for translation prompts, matched
    /// case-insensitively.
    #[serde(default)]
    pub impressions: BTreeMap<String, String>,
    #[serde(default, rename = "rule")]
    pub rules: Vec<PlannerRule>,
}

fn default_fallback() -> String {
    "I cannot help with that.".into()
}

fn default_failure() -> String {
    "I could not finish that request. $ERROR".into()
}

fn default_no_asset() -> String {
    "There is no music to work on yet. Please generate or upload a loop first.".into()
}

fn default_impression_fallback() -> String {
    "melodic popular song".into()
}

impl PlannerScript {
    pub fn from_toml(text: &str) -> Result<Self, LlmError> {
        toml::from_str(text).map_err(|e| LlmError::Script(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LlmError::Script(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// The script shipped with the crate.
    pub fn builtin() -> Self {
        Self::from_toml(DEFAULT_SCRIPT).expect("built-in planner script is valid")
    }
}

struct CompiledRule {
    pattern: Regex,
    steps: Vec<(String, String)>,
    final_template: String,
}

/// What the planner can see of one prompt.
#[derive(Debug, Default)]
struct PromptView<'a> {
    history: &'a str,
    input: &'a str,
    observations: Vec<&'a str>,
}

fn view(prompt: &str) -> PromptView<'_> {
    let Some(at) = prompt.rfind(INPUT_MARKER) else {
        return PromptView::default();
    };
    let history = &prompt[..at];
    let rest = &prompt[at + INPUT_MARKER.len()..];
    let end_marker = format!("\n\n{THOUGHT_PROMPT}");
    let (input, scratchpad) = match rest.find(&end_marker) {
        Some(e) => (&rest[..e], &rest[e + end_marker.len()..]),
        None => (rest, ""),
    };
    let observations = scratchpad
        .lines()
        .filter_map(|l| l.strip_prefix(OBSERVATION_MARKER))
        .collect();
    PromptView {
        history,
        input,
        observations,
    }
}

/// Rule-driven test double for the language model.
pub struct ScriptedPlanner {
    script: PlannerScript,
    rules: Vec<CompiledRule>,
    assets: Regex,
    typed: Regex,
}

impl std::fmt::Debug for ScriptedPlanner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScriptedPlanner")
            .field("rules", &self.rules.len())
            .finish()
    }
}

fn check_template(template: &str, pattern: &Regex) -> Result<(), LlmError> {
    let re = Regex::new(r"\$\{(\w+)\}|\$([A-Z_]+)").expect("static regex");
    for cap in re.captures_iter(template) {
        let name = cap.get(1).or(cap.get(2)).map(|m| m.as_str()).unwrap_or_default();
        let known = VARIABLES.contains(&name) || pattern.capture_names().flatten().any(|n| n == name);
        if !known {
            return Err(LlmError::Script(format!(
                "template {template:?} references unknown variable {name}"
            )));
        }
    }
    Ok(())
}

impl ScriptedPlanner {
    /// Compiles `script`, resolving step tools against `registry`.
    pub fn new(script: PlannerScript, registry: &ToolRegistry) -> Result<Self, LlmError> {
        let mut rules = Vec::with_capacity(script.rules.len());
        for rule in &script.rules {
            let pattern = Regex::new(&rule.pattern)
                .map_err(|e| LlmError::Script(format!("pattern {:?}: {e}", rule.pattern)))?;
            let mut steps = Vec::with_capacity(rule.steps.len());
            for step in &rule.steps {
                let spec = registry
                    .lookup(&step.tool)
                    .ok_or_else(|| LlmError::Script(format!("unknown tool {:?}", step.tool)))?;
                check_template(&step.input, &pattern)?;
                steps.push((spec.name.clone(), step.input.clone()));
            }
            check_template(&rule.final_template, &pattern)?;
            rules.push(CompiledRule {
                pattern,
                steps,
                final_template: rule.final_template.clone(),
            });
        }
        let no_captures = Regex::new("").expect("empty regex");
        for t in [&script.failure, &script.no_asset, &script.fallback] {
            check_template(t, &no_captures)?;
        }
        Ok(Self {
            script,
            rules,
            assets: asset_regex(),
            typed: typed_file_regex(),
        })
    }

    /// The built-in script over `registry`.
    pub fn builtin(registry: &ToolRegistry) -> Self {
        Self::new(PlannerScript::builtin(), registry).expect("built-in planner script compiles")
    }

    fn last_asset_in(&self, text: &str) -> Option<String> {
        self.assets.find_iter(text).last().map(|m| m.as_str().to_owned())
    }

    /// Latest file from an earlier answer or upload. Paths the human merely
    /// typed are skipped: nothing vouches that they exist.
    fn last_asset_in_history(&self, history: &str) -> Option<String> {
        let upload = format!("Human: {UPLOAD_MARKER}");
        history
            .lines()
            .rev()
            .filter(|l| l.starts_with(AI_LINE) || l.starts_with(&upload))
            .find_map(|l| self.last_asset_in(l))
    }

    fn translate(&self, prompt: &str) -> String {
        let title = prompt
            .lines()
            .find_map(|l| l.strip_prefix("Title:"))
            .unwrap_or_default()
            .trim()
            .to_lowercase();
        self.script
            .impressions
            .iter()
            .find(|(k, _)| k.trim().to_lowercase() == title)
            .map(|(_, v)| v.clone())
            .unwrap_or_else(|| self.script.impression_fallback.clone())
    }

    fn plan(&self, prompt: &str) -> String {
        let view = view(prompt);
        let query = strip_upload(view.input);

        let Some((rule, caps)) = self
            .rules
            .iter()
            .find_map(|r| r.pattern.captures(query).map(|c| (r, c)))
        else {
            return final_text(&self.script.fallback);
        };

        let last_observation = view.observations.last().copied().unwrap_or_default();
        let mut vars: BTreeMap<&str, String> = BTreeMap::new();
        vars.insert("INPUT", view.input.to_owned());
        vars.insert("QUERY", query.to_owned());
        vars.insert("LAST_OBSERVATION", last_observation.to_owned());
        for name in rule.pattern.capture_names().flatten() {
            let value = caps.name(name).map(|m| m.as_str().trim()).unwrap_or_default();
            vars.insert(name, value.to_owned());
        }

        if let Some(err) = view.observations.iter().find(|o| o.starts_with(ERROR_MARKER)) {
            vars.insert("ERROR", err.to_string());
            return final_text(&substitute(&self.script.failure, &vars));
        }

        let produced = view
            .observations
            .iter()
            .rev()
            .find_map(|o| self.last_asset_in(o));
        let last_asset = produced
            .clone()
            .or_else(|| self.typed.find_iter(view.input).last().map(|m| m.as_str().to_owned()))
            .or_else(|| self.last_asset_in_history(view.history));

        let done = view.observations.len();
        if let Some((tool, input)) = rule.steps.get(done) {
            if input.contains("$LAST_ASSET") || input.contains("${LAST_ASSET}") {
                match &last_asset {
                    Some(a) => vars.insert("LAST_ASSET", a.clone()),
                    None => return final_text(&self.script.no_asset),
                };
            }
            return AgentStep {
                thought: format!("{}Yes", THOUGHT_PROMPT.trim_start_matches("Thought: ")),
                action: tool.clone(),
                action_input: substitute(input, &vars),
            }
            .render();
        }

        if let Some(a) = &last_asset {
            vars.insert("LAST_ASSET", a.clone());
        }
        let uses_new = rule.final_template.contains("$NEW_ASSET") || rule.final_template.contains("${NEW_ASSET}");
        match produced {
            Some(a) => {
                vars.insert("NEW_ASSET", a);
            }
            None if uses_new => {
                vars.insert("ERROR", "No music was produced.".into());
                return final_text(&substitute(&self.script.failure, &vars));
            }
            None => {}
        }
        final_text(&substitute(&rule.final_template, &vars))
    }
}

fn strip_upload(input: &str) -> &str {
    match input.split_once('\n') {
        Some((first, rest)) if first.starts_with(UPLOAD_MARKER) => rest.trim(),
        _ => input.trim(),
    }
}

fn final_text(response: &str) -> String {
    AgentFinal {
        thought: format!("{}No", THOUGHT_PROMPT.trim_start_matches("Thought: ")),
        response: response.trim().to_owned(),
    }
    .render()
}

fn substitute(template: &str, vars: &BTreeMap<&str, String>) -> String {
    let re = Regex::new(r"\$\{(\w+)\}|\$([A-Z_]+)").expect("static regex");
    re.replace_all(template, |cap: &regex::Captures<'_>| {
        let name = cap.get(1).or(cap.get(2)).map(|m| m.as_str()).unwrap_or_default();
        vars.get(name).cloned().unwrap_or_default()
    })
    .into_owned()
}

impl LanguageModel for ScriptedPlanner {
    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        if prompt.trim().is_empty() {
            return Err(LlmError::EmptyPrompt);
        }
        if prompt.starts_with(impression_prompt_header()) {
            return Ok(self.translate(prompt));
        }
        Ok(self.plan(prompt))
    }
}
