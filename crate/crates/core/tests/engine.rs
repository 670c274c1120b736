//! Whole-turn behaviour of the engine on the scripted planner and mock
//! backends: the two-round rock loop dialogue, uploads, reference
//! resolution, atomic failure and transcript replay.

mod common;

use std::fs;
use std::sync::Arc;

use common::{recorded_engine, Call, SR};
use loopsmith_core::audio::{encode_wav, AssetStore, AudioBuffer, BitDepth, IdMode};
use loopsmith_core::backends::Backends;
use loopsmith_core::handler::{Engine, EngineConfig, Session, TurnError};
use loopsmith_core::llm::{LanguageModel, LlmError};
use loopsmith_core::tools::ToolError;
use loopsmith_core::transcript::{replay, Transcript, TranscriptError};

const ROUND_ONE: &str = "Can you give me a smooth rock music loop with a guitar and snare drums?";
const ROUND_TWO: &str = "I want to add a saxophone track to this music.";

#[test]
fn two_round_rock_loop_dialogue() {
    let dir = tempfile::tempdir().unwrap();
    let (engine, log) = recorded_engine(dir.path(), 7, None);
    let mut session = Session::new("s");

    let first = engine.handle_query(&mut session, ROUND_ONE, None).unwrap();
    assert_eq!(first.steps.len(), 1);
    assert_eq!(first.steps[0].action, "Generate music from user input text.");
    assert_eq!(first.produced_assets.len(), 1);
    let first_path = &first.produced_assets[0].relative_path;
    assert!(first.answer.contains(first_path.as_str()), "{}", first.answer);
    assert_eq!(session.gat.genre.as_deref(), Some("rock"));
    assert_eq!(session.gat.mood.as_deref(), Some("smooth"));
    assert_eq!(session.gat.tracks.mix.as_ref(), Some(&first.produced_assets[0]));

    let second = engine.handle_query(&mut session, ROUND_TWO, None).unwrap();
    assert_eq!(second.steps.len(), 1);
    assert_eq!(second.steps[0].action, "Add a new track to the given music loop.");
    assert!(second.steps[0].action_input.starts_with(first_path.as_str()));
    assert_eq!(second.produced_assets.len(), 1);
    assert_eq!(session.gat.instruments, ["saxophone", "guitar", "snare drums"]);
    assert_eq!(session.gat.tracks.mix.as_ref(), Some(&second.produced_assets[0]));
    assert!(session.gat.tracks.stems.is_empty());

    assert_eq!(session.history.len(), 2);
    assert_eq!(session.gat_history.len(), 2);
    // The second round's prompt carries the first round as history.
    let prompts: Vec<String> = log
        .lock()
        .iter()
        .filter_map(|c| match c {
            Call::Llm { prompt, .. } => Some(prompt.clone()),
            _ => None,
        })
        .collect();
    assert!(prompts.last().unwrap().contains(&format!("Human: {ROUND_ONE}")));
}

#[test]
fn questions_need_no_tools() {
    let dir = tempfile::tempdir().unwrap();
    let engine = Engine::offline(dir.path(), 1, EngineConfig::default()).unwrap();
    let mut session = Session::new("s");
    let turn = engine.handle_query(&mut session, "what can you do?", None).unwrap();
    assert!(turn.steps.is_empty());
    assert!(!turn.answer.trim().is_empty());
    assert!(turn.produced_assets.is_empty());
    assert_eq!(session.history.len(), 1);
    assert!(session.gat.is_empty());
}

#[test]
fn references_resolve_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let engine = Engine::offline(dir.path(), 1, EngineConfig::default()).unwrap();
    let asset = engine.store().store(&AudioBuffer::mono(vec![0.1; 100], SR).unwrap()).unwrap();
    assert_eq!(engine.resolve_asset_reference(&asset.relative_path).unwrap(), asset);
    assert_eq!(engine.resolve_asset_reference(&format!(" {} ", asset.relative_path)).unwrap(), asset);
    let missing = engine.resolve_asset_reference("music/deadbeef.wav").unwrap_err();
    assert!(matches!(missing, ToolError::NonexistentFile(_)));
    assert_eq!(missing.to_string(), "nonexistent file: music/deadbeef.wav");
    // No fuzzy matching on the id alone or a different directory.
    assert!(engine.resolve_asset_reference(asset.id.as_str()).is_err());
    assert!(engine.resolve_asset_reference(&format!("other/{}.wav", asset.id.as_str())).is_err());
}

#[test]
fn uploads_are_captioned_first() {
    let dir = tempfile::tempdir().unwrap();
    let (engine, log) = recorded_engine(dir.path(), 3, None);
    let upload = engine
        .store()
        .import_wav(&encode_wav(&AudioBuffer::stereo_from_mono(common::sine(200.0, 2.0, 0.5), SR).unwrap(), BitDepth::Pcm16).unwrap())
        .unwrap();
    let mut session = Session::new("s");
    let turn = engine
        .handle_query(&mut session, "Generate a pop song based on this drum pattern.", Some(&upload))
        .unwrap();
    assert!(turn
        .model_input
        .starts_with(&format!("Human provided music {} described as: ", upload.relative_path)));
    let calls = log.lock().clone();
    let caption_at = calls.iter().position(|c| *c == Call::Other(loopsmith_core::backends::Capability::Caption));
    let first_llm = calls.iter().position(|c| matches!(c, Call::Llm { .. }));
    assert!(caption_at.unwrap() < first_llm.unwrap());
    assert_eq!(turn.steps.len(), 1);
    assert!(turn.steps[0].action_input.starts_with(&upload.relative_path));
    assert_eq!(turn.attached_asset.as_ref(), Some(&upload));
}

/// A model that fails after a fixed number of successful completions.
struct FailAfter {
    inner: Arc<dyn LanguageModel>,
    budget: std::sync::atomic::AtomicUsize,
}

impl LanguageModel for FailAfter {
    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        use std::sync::atomic::Ordering;
        if self.budget.fetch_sub(1, Ordering::SeqCst) == 0 {
            return Err(LlmError::Transport {
                attempts: 3,
                detail: "connection reset".into(),
            });
        }
        self.inner.complete(prompt)
    }
}

#[test]
fn failed_turns_leave_the_session_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let store = Arc::new(AssetStore::open(dir.path(), IdMode::Seeded(5)).unwrap());
    let registry = loopsmith_core::tools::ToolRegistry::builtin();
    let planner = Arc::new(loopsmith_core::llm::ScriptedPlanner::builtin(&registry));
    // Round one needs two completions (step, answer); round two's tool step
    // succeeds and then the model drops out.
    let llm = Arc::new(FailAfter {
        inner: planner,
        budget: 3.into(),
    });
    let engine = Engine::new(llm, Backends::mock(5), store, EngineConfig::default()).unwrap();
    let mut session = Session::new("s");
    engine.handle_query(&mut session, ROUND_ONE, None).unwrap();
    let before = session.clone();

    let err = engine.handle_query(&mut session, ROUND_TWO, None).unwrap_err();
    assert!(matches!(err, TurnError::Llm { .. }), "{err}");
    assert_eq!(err.steps().len(), 1, "the executed step is reported");
    assert_eq!(session, before);
}

#[test]
fn empty_queries_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let engine = Engine::offline(dir.path(), 1, EngineConfig::default()).unwrap();
    let mut session = Session::new("s");
    assert!(matches!(engine.handle_query(&mut session, "  \n", None), Err(TurnError::EmptyQuery)));
    assert!(session.history.is_empty());
}

#[test]
fn replay_is_byte_stable() {
    let text = format!(
        "{{\"text\": \"{ROUND_ONE}\"}}\n{{\"text\": \"{ROUND_TWO}\"}}\n{{\"text\": \"Make it 9 times faster.\"}}\n"
    );
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let engine = Engine::offline(dir.path(), 11, EngineConfig::default()).unwrap();
        let t = Transcript::parse(&text, dir.path()).unwrap();
        replay(&engine, &t).unwrap()
    };
    let a = run();
    let b = run();
    assert_eq!(a.to_bytes(), b.to_bytes());
    assert_eq!(a.turns.len(), 3);
    assert_eq!(a.turns[0].produced_assets.len() + a.turns[1].produced_assets.len(), 2);
    assert!(a.turns[1].gat.instruments.contains(&"saxophone".to_owned()));
    // An out-of-range speed is reported by the tool and answered, not fatal.
    assert!(a.turns[2].steps.iter().all(|s| s.is_error));
    assert!(a.succeeded());
}

#[test]
fn replay_records_failed_turns_and_keeps_going() {
    // One model call per turn: any tool use hits the iteration cap.
    let config = EngineConfig {
        max_iterations: 1,
        ..EngineConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let engine = Engine::offline(dir.path(), 4, config).unwrap();
    let text = format!("{{\"text\": \"{ROUND_ONE}\"}}\n{{\"text\": \"what can you do?\"}}\n");
    let report = replay(&engine, &Transcript::parse(&text, dir.path()).unwrap()).unwrap();
    assert_eq!(report.failed_turns, 1);
    assert!(!report.succeeded());
    let failed = &report.turns[0];
    assert!(failed.answer.is_none());
    assert!(failed.error.as_ref().unwrap().contains("1"), "{:?}", failed.error);
    assert_eq!(failed.steps.len(), 1);
    assert!(failed.gat.is_empty(), "a failed turn commits nothing");
    assert!(report.turns[1].answer.is_some());
}

#[test]
fn transcripts_are_validated_before_running() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(Transcript::parse("", dir.path()), Err(TranscriptError::Empty)));
    let missing = Transcript::parse("{\"text\": \"hi\", \"audio\": \"drums.wav\"}", dir.path());
    assert!(matches!(missing, Err(TranscriptError::Audio { line: 1, .. })));

    let wav = encode_wav(&AudioBuffer::mono(vec![0.2; 4410], SR).unwrap(), BitDepth::Pcm16).unwrap();
    fs::write(dir.path().join("drums.wav"), wav).unwrap();
    fs::write(
        dir.path().join("session.jsonl"),
        "# uploads resolve next to the transcript\n{\"text\": \"Describe the current music.\", \"audio\": \"drums.wav\"}\n",
    )
    .unwrap();
    let t = Transcript::load(&dir.path().join("session.jsonl")).unwrap();
    let out = tempfile::tempdir().unwrap();
    let engine = Engine::offline(out.path(), 2, EngineConfig::default()).unwrap();
    let report = replay(&engine, &t).unwrap();
    let uploaded = report.turns[0].uploaded_asset.as_ref().unwrap();
    assert!(out.path().join(uploaded).is_file());
    assert!(matches!(
        Transcript::load(&dir.path().join("absent.jsonl")),
        Err(TranscriptError::Io { .. })
    ));
}
