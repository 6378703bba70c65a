use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use m2a_cli::client::ChatClient;
use m2a_cli::commands::{self, SynthArgs};
use m2a_cli::service::{self, AppState};
use m2a_cli::CliError;
use m2a_core::synthesis::Catalog;
use m2a_core::{AppConfig, Corpus, SystemKind};
use serde_json::Value;

#[derive(Parser)]
#[command(name = "m2a", version, about = "Agentic multimodal memory: service, chat, synthesis and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP/SSE service.
    Serve {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `service.bind`.
        #[arg(long)]
        bind: Option<String>,
    },
    /// Interactive terminal chat against a running service.
    Chat {
        #[arg(long)]
        conversation: String,
        #[arg(long, default_value = "http://127.0.0.1:8080")]
        url: String,
        /// Defaults to `M2A_BEARER_TOKEN`.
        #[arg(long)]
        token: Option<String>,
        /// Print stage events as they arrive.
        #[arg(long)]
        trace: bool,
    },
    /// Dump one conversation's raw log and semantic memory as JSON.
    Export {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        conversation: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Benchmark synthesis: inject concept sessions into every host conversation.
    #[command(args_conflicts_with_subcommands = true, subcommand_negates_reqs = true)]
    Synth {
        #[command(flatten)]
        run: SynthRun,
        #[command(subcommand)]
        command: Option<SynthCommand>,
    },
    /// Evaluation harness.
    Eval {
        #[command(subcommand)]
        command: EvalCommand,
    },
}

#[derive(clap::Args)]
struct SynthRun {
    /// Gateway used for bundle generation.
    #[arg(long, required = true)]
    config: Option<PathBuf>,
    /// Concept catalog directory.
    #[arg(long, required = true)]
    catalog: Option<PathBuf>,
    /// Host corpus file or directory.
    #[arg(long, visible_alias = "hosts", required = true)]
    host: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, required = true)]
    out: Option<PathBuf>,
    /// Host session gap to fill (0 = between sessions 1 and 2); widest gap by default.
    #[arg(long)]
    gap_index: Option<usize>,
    #[arg(long)]
    qa_count: Option<usize>,
    /// VQA bank (JSON) for image questions.
    #[arg(long)]
    vqa: Option<PathBuf>,
}

#[derive(Subcommand)]
enum SynthCommand {
    /// Check a corpus against the structural and generation constraints.
    Validate { corpus: PathBuf },
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Ingest, answer, judge and score; resumes into an existing run directory.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "m2a")]
        system: SystemKind,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the accuracy table of a finished run.
    Report {
        dir: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

fn load(path: &Path) -> Result<AppConfig, CliError> {
    Ok(AppConfig::load(path)?)
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => println!("{text}"),
    }
    Ok(())
}

fn chat(conversation: &str, url: &str, token: Option<String>, trace: bool) -> Result<(), CliError> {
    let token = token.or_else(|| std::env::var("M2A_BEARER_TOKEN").ok().filter(|t| !t.is_empty()));
    let client = ChatClient::new(url, token)?;
    client.ensure_session(conversation)?;
    eprintln!("conversation `{conversation}` — empty line or Ctrl-D to quit");
    let stdin = std::io::stdin();
    let mut stdout = std::io::stdout();
    loop {
        write!(stdout, "> ")?;
        stdout.flush()?;
        let mut line = String::new();
        if stdin.lock().read_line(&mut line)? == 0 || line.trim().is_empty() {
            return Ok(());
        }
        let result = client.send(conversation, line.trim(), &[], &mut |ev| match ev.event.as_str() {
            "delta" => {
                if let Ok(v) = serde_json::from_str::<Value>(&ev.data) {
                    print!("{}", v["text"].as_str().unwrap_or_default());
                    let _ = std::io::stdout().flush();
                }
            }
            "stage" if trace => eprintln!("[{}]", ev.data),
            _ => {}
        });
        println!();
        match result {
            Ok(r) => {
                let queries = r["memory_queries"].as_array().map_or(0, Vec::len);
                if trace || queries > 0 {
                    eprintln!("({queries} memory queries)");
                }
            }
            Err(e) => eprintln!("error: {e}"),
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Serve { config, bind } => {
            let cfg = load(&config)?;
            let bind = bind.unwrap_or_else(|| cfg.service.bind.clone());
            let state = Arc::new(AppState::from_config(&cfg)?);
            let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            rt.block_on(service::serve(state, &bind))?;
            Ok(())
        }
        Command::Chat {
            conversation,
            url,
            token,
            trace,
        } => chat(&conversation, &url, token, trace),
        Command::Export {
            config,
            conversation,
            out,
        } => {
            let doc = commands::export(&load(&config)?, &conversation)?;
            let text = serde_json::to_string_pretty(&doc).map_err(m2a_core::Error::from)?;
            write_or_print(out.as_deref(), &text)
        }
        Command::Synth { run, command } => match command {
            None => {
                let (Some(config), Some(host), Some(catalog), Some(out)) = (run.config, run.host, run.catalog, run.out)
                else {
                    return Err(CliError::Invalid("synth needs --config, --catalog, --host and --out".into()));
                };
                let cfg = load(&config)?;
                let gateway = cfg.gateway.build()?;
                let hosts = Corpus::load(&host)?;
                let catalog = Catalog::load(&catalog)?;
                let args = SynthArgs {
                    seed: run.seed,
                    gap_index: run.gap_index,
                    qa_count: run.qa_count,
                    vqa: run.vqa,
                };
                let corpus = commands::synth(&gateway, &hosts, &catalog, &args)?;
                corpus.write(&out)?;
                eprintln!("wrote {} conversations to {}", corpus.conversations.len(), out.display());
                Ok(())
            }
            Some(SynthCommand::Validate { corpus }) => {
                let report = commands::validate(&corpus)?;
                for w in &report.warnings {
                    eprintln!("warning: {w}");
                }
                for e in &report.errors {
                    eprintln!("error: {e}");
                }
                if report.is_clean() {
                    println!("{} conversations OK", report.conversations);
                    Ok(())
                } else {
                    Err(CliError::Invalid(format!(
                        "{} errors, {} warnings",
                        report.errors.len(),
                        report.warnings.len()
                    )))
                }
            }
        },
        Command::Eval { command } => match command {
            EvalCommand::Run {
                config,
                corpus,
                system,
                out,
            } => {
                let cfg = load(&config)?;
                let report = commands::eval_run(&cfg, &corpus, system, &out, &mut |m| eprintln!("{m}"))?;
                print!("{}", m2a_core::eval::render_table(&report));
                Ok(())
            }
            EvalCommand::Report { dir, json } => {
                if json {
                    let r = m2a_core::eval::read_report(&dir)?;
                    println!("{}", serde_json::to_string_pretty(&r).map_err(m2a_core::Error::from)?);
                } else {
                    print!("{}", commands::eval_report(&dir)?);
                }
                Ok(())
            }
        },
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
