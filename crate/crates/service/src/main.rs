//! `loopsmith` command line: `serve`, `chat` and `replay`.

use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use loopsmith_service::{run_chat, run_replay, serve, ServiceConfig, REPORT_FILE};

#[derive(Debug, Parser)]
#[command(name = "loopsmith", version, about = "Conversational music-loop co-creation")]
struct Cli {
    /// TOML configuration file; LOOPSMITH_* environment variables override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for asset ids and mock backends.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Use the scripted planner and mock backends regardless of configuration.
    #[arg(long, global = true)]
    mock: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Start the HTTP service.
    Serve {
        /// Address to listen on, overriding the configuration.
        #[arg(long)]
        bind: Option<String>,
    },
    /// Chat with a local engine on stdin/stdout.
    Chat,
    /// Replay a transcript and write a report.
    Replay {
        /// JSON-lines transcript: {"text": "...", "audio": "optional.wav"} per line.
        transcript: PathBuf,
        /// Output directory for the report and produced music.
        #[arg(long, default_value = "replay-out")]
        out: PathBuf,
    },
}

fn load_config(cli: &Cli) -> Result<ServiceConfig, String> {
    let mut config = ServiceConfig::load(cli.config.as_deref()).map_err(|e| e.to_string())?;
    if let Some(seed) = cli.seed {
        config.set_seed(seed);
    }
    if cli.mock {
        config.force_mock();
    }
    config.validate().map_err(|e| e.to_string())?;
    Ok(config)
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(io::stderr)
        .init();
    let cli = Cli::parse();
    let config = match load_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match cli.command {
        Command::Serve { bind } => {
            let mut config = config;
            if let Some(bind) = bind {
                config.bind = bind;
            }
            let runtime = match tokio::runtime::Runtime::new() {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            match runtime.block_on(serve(config)) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(2)
                }
            }
        }
        Command::Chat => {
            let engine = match config.build_engine() {
                Ok(e) => e,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            match run_chat(&engine, io::stdin().lock(), io::stdout().lock()) {
                Ok(_) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(2)
                }
            }
        }
        Command::Replay { transcript, out } => match run_replay(&config, &transcript, &out) {
            Ok(report) => {
                let failed = report.turns.iter().filter(|t| t.error.is_some()).count();
                println!(
                    "{} turns, {} failed; report written to {}",
                    report.turns.len(),
                    failed,
                    out.join(REPORT_FILE).display()
                );
                if report.succeeded() {
                    ExitCode::SUCCESS
                } else {
                    ExitCode::FAILURE
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        },
    }
}
