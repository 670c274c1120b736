//! The `loopsmith` binary end to end: batch replay, its exit codes and
//! report stability, configuration layering and the chat loop.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use loopsmith_core::audio::{encode_wav, AudioBuffer, BitDepth};
use serde_json::Value;

const TRANSCRIPT: &str = r#"# Two-round loop session
{"text": "Can you give me a smooth rock music loop with a guitar and snare drums?"}
{"text": "I want to add a saxophone track to this music."}
"#;

fn loopsmith() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_loopsmith"));
    // Keep the caller's environment from leaking into the tests.
    for (key, _) in std::env::vars() {
        if key.starts_with("LOOPSMITH_") {
            cmd.env_remove(key);
        }
    }
    cmd
}

fn replay(transcript: &Path, out: &Path, extra: &[&str]) -> Output {
    loopsmith()
        .args(["--mock", "--seed", "7"])
        .args(extra)
        .arg("replay")
        .arg(transcript)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn write_transcript(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("session.jsonl");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn replay_writes_a_stable_report() {
    let work = tempfile::tempdir().unwrap();
    let transcript = write_transcript(work.path(), TRANSCRIPT);
    let (a, b) = (work.path().join("a"), work.path().join("b"));

    let first = replay(&transcript, &a, &[]);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    assert!(String::from_utf8_lossy(&first.stdout).contains("2 turns, 0 failed"));
    let second = replay(&transcript, &b, &[]);
    assert!(second.status.success());

    let report_a = fs::read(a.join("report.json")).unwrap();
    assert_eq!(report_a, fs::read(b.join("report.json")).unwrap());

    let report: Value = serde_json::from_slice(&report_a).unwrap();
    let turns = report["turns"].as_array().unwrap();
    assert_eq!(turns.len(), 2);
    let mut assets = 0;
    for turn in turns {
        for path in turn["produced_assets"].as_array().unwrap() {
            assert!(a.join(path.as_str().unwrap()).is_file());
            assets += 1;
        }
    }
    assert_eq!(assets, 2);
    let instruments = turns[1]["gat"]["instruments"].as_array().unwrap();
    assert!(instruments.iter().any(|i| i == "saxophone"));
}

#[test]
fn replay_refuses_a_used_output_directory() {
    let work = tempfile::tempdir().unwrap();
    let transcript = write_transcript(work.path(), TRANSCRIPT);
    let out = work.path().join("out");
    assert!(replay(&transcript, &out, &[]).status.success());
    let again = replay(&transcript, &out, &[]);
    assert_eq!(again.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&again.stderr).contains("already contains music"));
}

#[test]
fn invalid_transcripts_fail_before_running() {
    let work = tempfile::tempdir().unwrap();
    let empty = write_transcript(work.path(), "# nothing here\n");
    let out = work.path().join("out");
    let run = replay(&empty, &out, &[]);
    assert_eq!(run.status.code(), Some(2));
    assert!(!out.join("music").exists());

    let missing_audio = write_transcript(work.path(), "{\"text\": \"Describe the current music.\", \"audio\": \"gone.wav\"}\n");
    let run = replay(&missing_audio, &out, &[]);
    assert_eq!(run.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&run.stderr).contains("gone.wav"));
    assert!(!out.join("report.json").exists());

    let unreadable = replay(&work.path().join("absent.jsonl"), &out, &[]);
    assert_eq!(unreadable.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&unreadable.stderr).contains("absent.jsonl"));
}

#[test]
fn failed_turns_give_a_nonzero_exit_and_are_reported() {
    let work = tempfile::tempdir().unwrap();
    let transcript = write_transcript(work.path(), TRANSCRIPT);
    let out = work.path().join("out");
    // One model call per turn cannot both use a tool and answer.
    let run = loopsmith()
        .env("LOOPSMITH_MAX_ITERATIONS", "1")
        .args(["--mock", "--seed", "7", "replay"])
        .arg(&transcript)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(run.status.code(), Some(1), "{}", String::from_utf8_lossy(&run.stderr));
    let report: Value = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["failed_turns"], 1);
    assert!(report["turns"][0]["error"].as_str().unwrap().contains("1 model calls"));
    // With nothing committed there is no loop to extend, so the second
    // turn is answered directly and replay carried on past the failure.
    assert!(report["turns"][1]["answer"].is_string());
}

#[test]
fn config_file_then_environment_then_flags() {
    let work = tempfile::tempdir().unwrap();
    let transcript = write_transcript(work.path(), TRANSCRIPT);
    let config = work.path().join("loopsmith.toml");
    fs::write(&config, "[engine]\nmax_iterations = 1\n").unwrap();

    // The file alone makes the tool-using turn fail...
    let out = work.path().join("file");
    let run = replay(&transcript, &out, &["--config", config.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(1));

    // ...and the environment overrides the file.
    let out = work.path().join("env");
    let run = loopsmith()
        .env("LOOPSMITH_MAX_ITERATIONS", "10")
        .args(["--mock", "--seed", "7", "--config"])
        .arg(&config)
        .arg("replay")
        .arg(&transcript)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));

    let bad = work.path().join("bad.toml");
    fs::write(&bad, "[engine]\nmax_iterations = \"lots\"\n").unwrap();
    let run = replay(&transcript, &work.path().join("bad"), &["--config", bad.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&run.stderr).contains("bad.toml"));
}

#[test]
fn different_seeds_give_different_ids() {
    let work = tempfile::tempdir().unwrap();
    let transcript = write_transcript(work.path(), TRANSCRIPT);
    let a = work.path().join("a");
    let b = work.path().join("b");
    assert!(replay(&transcript, &a, &[]).status.success());
    let run = loopsmith()
        .args(["--mock", "--seed", "8", "replay"])
        .arg(&transcript)
        .arg("--out")
        .arg(&b)
        .output()
        .unwrap();
    assert!(run.status.success());
    assert_ne!(fs::read(a.join("report.json")).unwrap(), fs::read(b.join("report.json")).unwrap());
}

#[test]
fn uploads_in_transcripts_resolve_next_to_the_file() {
    let work = tempfile::tempdir().unwrap();
    let wav = encode_wav(&AudioBuffer::mono(vec![0.25; 22_050], 44_100).unwrap(), BitDepth::Pcm16).unwrap();
    fs::write(work.path().join("drums.wav"), wav).unwrap();
    let transcript = write_transcript(
        work.path(),
        "{\"text\": \"Generate a pop song based on this drum pattern.\", \"audio\": \"drums.wav\"}\n",
    );
    let out = work.path().join("out");
    let run = replay(&transcript, &out, &[]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let report: Value = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    let uploaded = report["turns"][0]["uploaded_asset"].as_str().unwrap();
    assert!(out.join(uploaded).is_file());
}

#[test]
fn chat_answers_on_stdout() {
    let work = tempfile::tempdir().unwrap();
    let mut child = loopsmith()
        .env("LOOPSMITH_ASSET_ROOT", work.path())
        .args(["--mock", "--seed", "3", "chat"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(b"Generate a rock music with guitar and drums.\n/state\nwhat can you do?\n/quit\nnever read\n")
        .unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.matches("AI: ").count(), 2, "{stdout}");
    assert!(stdout.contains("[1] Generate music from user input text."), "{stdout}");
    assert!(stdout.contains("\"genre\": \"rock\""), "{stdout}");
    let produced = fs::read_dir(work.path().join("music")).unwrap().count();
    assert_eq!(produced, 1);
}

#[test]
fn help_lists_the_subcommands() {
    let out = loopsmith().arg("--help").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for word in ["serve", "chat", "replay", "--config", "--seed", "--mock"] {
        assert!(text.contains(word), "{word}");
    }
}

#[test]
fn serve_answers_http_requests() {
    use std::io::Read;
    use std::net::{TcpListener, TcpStream};
    use std::time::{Duration, Instant};

    let work = tempfile::tempdir().unwrap();
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let addr = format!("127.0.0.1:{port}");
    let mut child = loopsmith()
        .env("LOOPSMITH_ASSET_ROOT", work.path())
        .args(["--mock", "--seed", "1", "serve", "--bind", &addr])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(20);
    let response = loop {
        if let Ok(mut stream) = TcpStream::connect(&addr) {
            stream
                .write_all(b"POST /sessions HTTP/1.1\r\nHost: localhost\r\nContent-Length: 0\r\nConnection: close\r\n\r\n")
                .unwrap();
            let mut text = String::new();
            stream.read_to_string(&mut text).unwrap();
            break text;
        }
        assert!(Instant::now() < deadline, "server never came up");
        std::thread::sleep(Duration::from_millis(50));
    };
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(response.starts_with("HTTP/1.1 201"), "{response}");
    assert!(response.contains("session_id"));
}
