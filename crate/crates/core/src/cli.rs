//! Command-line surface: `ask`, `eval`, `memory` and `tools`.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::CliConfig;
use crate::ehr_store::{load_database, EhrDatabase};
use crate::eval::{evaluate, load_dataset, trace_id, EvalOptions};
use crate::knowledge::load_knowledge_demos;
use crate::llm::{ChatBackend, HttpBackend, RecordingBackend, ReplayBackend};
use crate::memory::MemoryStore;
use crate::orchestrator::{load_demos, Agent, MemoryPolicy, QueryStatus};
use crate::toolkit::{dispatch as call_tool, ToolName};

pub const EXIT_OK: i32 = 0;
pub const EXIT_UNSOLVED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "ehragent", version, about = "Answer questions over EHR tables with a tool-using LLM agent")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Config file (default: ehragent.json in the working directory, if present).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Skip the knowledge step.
    #[arg(long, global = true)]
    pub no_knowledge: bool,
    /// Use only the shipped demonstrations and never write to memory.
    #[arg(long, global = true)]
    pub no_memory: bool,
    /// Skip diagnosis of failed plans.
    #[arg(long, global = true)]
    pub no_debug: bool,
    /// Answer model calls from a recorded trace; no network access.
    #[arg(long, global = true, value_name = "TRACE")]
    pub replay: Option<PathBuf>,
    /// Append every live model call to a trace file.
    #[arg(long, global = true, value_name = "TRACE", conflicts_with = "replay")]
    pub record: Option<PathBuf>,
    /// Which finished queries are written to memory.
    #[arg(long, global = true, value_enum)]
    pub memory_policy: Option<PolicyArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PolicyArg {
    Success,
    Completion,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Answer one question.
    Ask {
        question: String,
        /// Write the full query result and transcript as JSON.
        #[arg(long, value_name = "FILE")]
        save: Option<PathBuf>,
    },
    /// Run a dataset and report success and completion rates.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        /// Give every item the memory as it was at the start of the run.
        #[arg(long)]
        fresh_memory: bool,
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        /// Report JSON path.
        #[arg(long, default_value = "eval_report.json")]
        out: PathBuf,
        /// Also write per-item query results as JSON lines.
        #[arg(long, value_name = "FILE")]
        results: Option<PathBuf>,
    },
    /// Inspect or edit long-term memory.
    Memory {
        #[command(subcommand)]
        action: MemoryAction,
    },
    /// Call the toolkit directly.
    Tools {
        #[command(subcommand)]
        action: ToolsAction,
    },
}

#[derive(Debug, Subcommand)]
pub enum MemoryAction {
    List,
    Clear,
    /// Insert question and code pairs from a JSON array or JSON lines file.
    Import { file: PathBuf },
}

#[derive(Debug, Subcommand)]
pub enum ToolsAction {
    /// Run one tool; every argument is passed as a string.
    Exec {
        name: String,
        #[arg(allow_hyphen_values = true, trailing_var_arg = true)]
        args: Vec<String>,
    },
}

/// Parses `argv` and runs the command, returning the process exit code.
pub fn dispatch(argv: &[String], out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{text}");
            } else {
                let _ = write!(out, "{text}");
            }
            return code;
        }
    };
    match run(cli, out) {
        Ok(code) => code,
        Err(Failure(code, msg)) => {
            let _ = writeln!(err, "error: {msg}");
            code
        }
    }
}

struct Failure(i32, String);

fn usage(msg: impl std::fmt::Display) -> Failure {
    Failure(EXIT_USAGE, msg.to_string())
}

fn load_config(g: &GlobalArgs) -> Result<CliConfig, Failure> {
    let mut cfg = CliConfig::discover(g.config.as_deref()).map_err(usage)?;
    if g.no_knowledge {
        cfg.agent.ablations.knowledge = false;
    }
    if g.no_memory {
        cfg.agent.ablations.memory = false;
    }
    if g.no_debug {
        cfg.agent.ablations.debug = false;
    }
    if let Some(p) = &g.replay {
        cfg.paths.replay = Some(p.clone());
    }
    if let Some(p) = g.memory_policy {
        cfg.agent.memory_policy = match p {
            PolicyArg::Success => MemoryPolicy::Success,
            PolicyArg::Completion => MemoryPolicy::Completion,
        };
    }
    Ok(cfg)
}

fn load_db(cfg: &CliConfig) -> Result<EhrDatabase, Failure> {
    load_database(&cfg.paths.tables, &cfg.paths.metadata).map_err(usage)
}

fn open_memory(cfg: &CliConfig) -> Result<MemoryStore, Failure> {
    Ok(MemoryStore::open(&cfg.paths.memory)
        .map_err(usage)?
        .with_lowercase(cfg.memory_lowercase))
}

fn build_agent(cfg: &CliConfig) -> Result<Agent, Failure> {
    let db = load_db(cfg)?;
    let demos = load_demos(&cfg.paths.demos).map_err(usage)?;
    let knowledge_demos = if cfg.agent.ablations.knowledge {
        load_knowledge_demos(&cfg.paths.knowledge_demos).map_err(usage)?
    } else {
        Vec::new()
    };
    Ok(Agent::new(
        cfg.agent.clone(),
        db,
        demos,
        knowledge_demos,
        cfg.sandbox.clone(),
    ))
}

/// The replay trace when one is configured, else the live endpoint.
fn build_llm(cfg: &CliConfig, record: Option<&Path>) -> Result<(Box<dyn ChatBackend>, Option<String>), Failure> {
    if let Some(path) = &cfg.paths.replay {
        let bytes = std::fs::read(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let replay = ReplayBackend::load(path).map_err(usage)?;
        log::info!("replaying {} recorded responses from {}", replay.len(), path.display());
        return Ok((Box::new(replay), Some(trace_id(&bytes))));
    }
    let http = HttpBackend::from_config(&cfg.llm).map_err(usage)?;
    match record {
        Some(p) => {
            let rec = RecordingBackend::new(http, p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
            Ok((Box::new(rec), None))
        }
        None => Ok((Box::new(http), None)),
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure(EXIT_USAGE, format!("{}: {e}", path.display())))
}

fn run(cli: Cli, out: &mut dyn Write) -> Result<i32, Failure> {
    let g = &cli.global;
    match &cli.command {
        Command::Ask { question, save } => {
            let cfg = load_config(g)?;
            let agent = build_agent(&cfg)?;
            let store = open_memory(&cfg)?;
            let (llm, _) = build_llm(&cfg, g.record.as_deref())?;
            let result = agent.run_query(&store, llm.as_ref(), question);
            if let Some(p) = save {
                let mut text = serde_json::to_string_pretty(&result.to_json()).expect("results serialize");
                text.push('\n');
                write_file(p, &text)?;
            }
            match (&result.status, &result.final_answer) {
                (QueryStatus::Solved, Some(a)) => {
                    let _ = writeln!(out, "ANSWER: {a}");
                    Ok(EXIT_OK)
                }
                _ => {
                    let label = result.failure_label.map(|l| l.as_str()).unwrap_or("unknown");
                    let _ = writeln!(out, "UNSOLVED: {label}");
                    Ok(EXIT_UNSOLVED)
                }
            }
        }
        Command::Eval {
            dataset,
            fresh_memory,
            parallel,
            out: report_path,
            results,
        } => {
            let cfg = load_config(g)?;
            let agent = build_agent(&cfg)?;
            let store = open_memory(&cfg)?;
            let items = load_dataset(dataset).map_err(usage)?;
            let (llm, trace) = build_llm(&cfg, g.record.as_deref())?;
            let opts = EvalOptions {
                fresh_memory: *fresh_memory,
                parallel: *parallel,
                model: cfg.llm.model.clone(),
                trace_id: trace,
            };
            let (report, per_item) = evaluate(&agent, &store, llm.as_ref(), &items, &opts).map_err(usage)?;
            if !report.metadata.deterministic {
                log::warn!("parallel run with shared memory: demonstrations depend on completion order");
            }
            write_file(report_path, &report.to_json_pretty())?;
            if let Some(p) = results {
                let mut text = String::new();
                for r in &per_item {
                    text.push_str(&r.canonical_json());
                    text.push('\n');
                }
                write_file(p, &text)?;
            }
            let _ = write!(out, "{}", report.text_table());
            Ok(EXIT_OK)
        }
        Command::Memory { action } => {
            let cfg = load_config(g)?;
            let store = open_memory(&cfg)?;
            match action {
                MemoryAction::List => {
                    for e in store.entries() {
                        let _ = writeln!(out, "{}\t{}", e.seq, e.question);
                    }
                }
                MemoryAction::Clear => {
                    store.clear().map_err(usage)?;
                    let _ = writeln!(out, "cleared {}", store.path().display());
                }
                MemoryAction::Import { file } => {
                    let pairs = read_pairs(file)?;
                    for (q, c) in &pairs {
                        store.insert_success(q, c).map_err(usage)?;
                    }
                    let _ = writeln!(out, "imported {} entries", pairs.len());
                }
            }
            Ok(EXIT_OK)
        }
        Command::Tools {
            action: ToolsAction::Exec { name, args },
        } => {
            let tool = ToolName::parse(name).ok_or_else(|| {
                let names: Vec<&str> = ToolName::ALL.iter().map(|t| t.as_str()).collect();
                usage(format!("unknown tool {name:?}; expected one of {}", names.join(", ")))
            })?;
            let needs_db = !matches!(tool, ToolName::Calculate);
            let db = if needs_db {
                let cfg = load_config(g)?;
                load_db(&cfg)?
            } else {
                EhrDatabase::default()
            };
            let json_args: Vec<serde_json::Value> = args.iter().map(|a| a.clone().into()).collect();
            match call_tool(&db, tool, &json_args) {
                Ok(v) => {
                    let _ = writeln!(out, "{}", v.to_string().trim_end());
                    Ok(EXIT_OK)
                }
                Err(e) => Err(Failure(EXIT_UNSOLVED, format!("{}: {}", e.code(), e.message()))),
            }
        }
    }
}

#[derive(serde::Deserialize)]
struct Pair {
    question: String,
    code: String,
}

fn read_pairs(path: &Path) -> Result<Vec<(String, String)>, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let bad = |e: serde_json::Error| usage(format!("{}: {e}", path.display()));
    let pairs: Vec<Pair> = if text.trim_start().starts_with('[') {
        serde_json::from_str(&text).map_err(bad)?
    } else {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str::<Pair>)
            .collect::<Result<_, _>>()
            .map_err(bad)?
    };
    Ok(pairs.into_iter().map(|p| (p.question, p.code)).collect())
}
