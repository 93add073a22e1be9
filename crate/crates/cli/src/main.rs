//! `szz`: find vulnerability-inducing commits from their fixes.

mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};

use szz_core::classic::{self, Algorithm};
use szz_core::dataset::{convert_csv, load_dataset, prepare_cases, write_dataset, RepoCache};
use szz_core::eval::{render_table, run_evaluation, EvalConfig, MasBackend, TableFormat};
use szz_core::llm::{ChatBackend, LiveBackend, RecordingBackend, ReplayBackend, Transcript, API_KEY_ENV};
use szz_core::pipeline::{CaseInput, CaseRecord, Pipeline};
use szz_core::prompts::PromptSet;
use szz_core::repo::RepoHandle;

use config::{BackendKind, ConfigLayer, OutputFormat, RunConfig};

const EXIT_OK: u8 = 0;
const EXIT_ERROR: u8 = 1;
const EXIT_DEGRADED: u8 = 2;

#[derive(Parser)]
#[command(name = "szz", version, about = "Identify vulnerability-inducing commits")]
struct Cli {
    /// TOML file with defaults for any flag.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output format.
    #[arg(long, global = true, value_enum, default_value = "json")]
    format: OutputFormat,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct TraceArgs {
    /// Case identifier, usually a CVE id.
    #[arg(long)]
    cve: String,
    /// Path to the repository.
    #[arg(long)]
    repo: PathBuf,
    /// Fixing commit.
    #[arg(long)]
    fix: String,
    /// Vulnerability description.
    #[arg(long, default_value = "")]
    description: String,
    /// Read the description from a file instead.
    #[arg(long, conflicts_with = "description")]
    description_file: Option<PathBuf>,
    /// Directory for the full audit record.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    settings: ConfigLayer,
}

#[derive(Subcommand)]
enum Command {
    /// Run the agent pipeline on one fixing commit.
    Trace(TraceArgs),
    /// Run the agent pipeline live and save the transcript for replay.
    Record(TraceArgs),
    /// Run one classic SZZ variant on a fixing commit.
    Baseline {
        /// bszz, agszz, maszz, lszz, rszz or vszz.
        #[arg(long)]
        algorithm: Algorithm,
        #[arg(long)]
        repo: PathBuf,
        #[arg(long)]
        fix: String,
        #[command(flatten)]
        settings: ConfigLayer,
    },
    /// Score algorithms over a JSONL dataset.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        /// Comma-separated algorithm names; `mas` selects the agent pipeline.
        #[arg(long, value_delimiter = ',', default_value = "bszz,agszz,maszz,lszz,rszz,vszz")]
        algorithms: Vec<Algorithm>,
        /// Directory for report.json, report.md and report.csv.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        settings: ConfigLayer,
    },
    /// Convert a CSV dataset to JSONL on stdout.
    Convert {
        #[arg(long)]
        input: PathBuf,
        /// Prefix joined to the repo column, e.g. `https://github.com/`.
        #[arg(long)]
        repo_prefix: Option<String>,
    },
}

fn run_config(file: Option<&Path>, flags: ConfigLayer) -> Result<RunConfig, String> {
    let file_layer = match file {
        Some(path) => ConfigLayer::load(path)?,
        None => ConfigLayer::default(),
    };
    RunConfig::resolve(flags.over(file_layer))
}

fn prompts(config: &RunConfig) -> Result<PromptSet, String> {
    match &config.prompts_dir {
        Some(dir) => PromptSet::with_overrides(dir).map_err(|e| e.to_string()),
        None => Ok(PromptSet::builtin()),
    }
}

fn live_backend(config: &RunConfig) -> LiveBackend {
    if std::env::var_os(API_KEY_ENV).is_none() {
        log::warn!("{API_KEY_ENV} is not set; requests go out unauthenticated");
    }
    LiveBackend::from_env(config.live.clone())
}

fn emit_json(value: &impl serde::Serialize) -> Result<(), String> {
    let text = serde_json::to_string_pretty(value).map_err(|e| e.to_string())?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "{text}").map_err(|e| e.to_string())
}

fn write_file(path: &Path, contents: &str) -> Result<(), String> {
    std::fs::write(path, contents).map_err(|e| format!("writing {}: {e}", path.display()))
}

fn cmd_trace(args: TraceArgs, file: Option<&Path>, format: OutputFormat, force_record: bool) -> Result<u8, String> {
    let mut config = run_config(file, args.settings)?;
    if force_record {
        config.backend = BackendKind::Record;
        config.transcript.as_ref().ok_or("record needs --transcript")?;
    }
    let description = match &args.description_file {
        Some(path) => std::fs::read_to_string(path).map_err(|e| format!("reading {}: {e}", path.display()))?,
        None => args.description,
    };
    let repo = RepoHandle::open(&args.repo, Some(config.context_lines)).map_err(|e| e.to_string())?;
    let prompts = prompts(&config)?;
    let input = CaseInput {
        case_id: args.cve,
        fix_commit: args.fix,
        description,
    };
    let run = |backend: &dyn ChatBackend| -> Result<CaseRecord, String> {
        Pipeline {
            backend,
            repo: &repo,
            prompts: &prompts,
            config: config.pipeline,
        }
        .run(&input)
        .map_err(|e| e.to_string())
    };
    let record = match config.backend {
        BackendKind::Replay => {
            let path = config.transcript.as_ref().ok_or("replay needs --transcript")?;
            let transcript = Transcript::load(path).map_err(|e| e.to_string())?;
            run(&ReplayBackend::new(transcript, config.strict_replay))?
        }
        BackendKind::Live => run(&live_backend(&config))?,
        BackendKind::Record => {
            let path = config.transcript.as_ref().ok_or("record needs --transcript")?;
            let recorder = RecordingBackend::new(live_backend(&config));
            let result = run(&recorder);
            recorder.transcript().save(path).map_err(|e| e.to_string())?;
            result?
        }
    };
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir).map_err(|e| e.to_string())?;
        let name = szz_core::eval::transcript_file_name(&record.case_id).replace(".json", ".record.json");
        let text = serde_json::to_string_pretty(&record).map_err(|e| e.to_string())?;
        write_file(&dir.join(name), &text)?;
    }
    let result = record.vic_result();
    match format {
        OutputFormat::Json => emit_json(&result)?,
        OutputFormat::Table => {
            let mut out = std::io::stdout().lock();
            for t in &result.traces {
                let _ = writeln!(
                    out,
                    "{}:{}  {:?}  vic={}",
                    t.anchor.file,
                    t.anchor.line_no,
                    t.terminated_by,
                    t.vic.as_deref().unwrap_or("-")
                );
            }
            let vics: Vec<&str> = result.vics.iter().map(String::as_str).collect();
            let _ = writeln!(out, "vics: {}", vics.join(", "));
        }
    }
    Ok(if result.degraded { EXIT_DEGRADED } else { EXIT_OK })
}

fn cmd_baseline(
    algorithm: Algorithm,
    repo: &Path,
    fix: &str,
    file: Option<&Path>,
    settings: ConfigLayer,
    format: OutputFormat,
) -> Result<u8, String> {
    if algorithm == Algorithm::Mas {
        return Err("baseline runs classic variants only; use `trace` for mas".into());
    }
    let config = run_config(file, settings)?;
    let repo = RepoHandle::open(repo, Some(config.context_lines)).map_err(|e| e.to_string())?;
    let set = classic::run(&repo, algorithm, fix, config.vszz_threshold).map_err(|e| e.to_string())?;
    match format {
        OutputFormat::Json => emit_json(&set)?,
        OutputFormat::Table => {
            let mut out = std::io::stdout().lock();
            for (commit, lines) in set.line_counts() {
                let _ = writeln!(out, "{commit}  {lines} line(s)");
            }
        }
    }
    for w in &set.warnings {
        eprintln!("warning: {w}");
    }
    Ok(EXIT_OK)
}

fn cmd_eval(
    dataset: &Path,
    algorithms: Vec<Algorithm>,
    out: Option<&Path>,
    file: Option<&Path>,
    settings: ConfigLayer,
    format: OutputFormat,
) -> Result<u8, String> {
    let uses_mas = algorithms.contains(&Algorithm::Mas);
    let mut layer = settings;
    if !uses_mas && layer.backend.is_none() {
        // classic-only runs never talk to a model, so skip backend validation
        layer.backend = Some(BackendKind::Live);
    }
    let config = run_config(file, layer)?;
    let cases = load_dataset(dataset).map_err(|e| e.to_string())?;
    let base_dir = dataset.parent().unwrap_or(Path::new("."));
    let (ready, skipped) = prepare_cases(cases, &RepoCache::new(&config.cache_dir), base_dir);
    let mas_backend = if uses_mas {
        Some(match config.backend {
            BackendKind::Replay => MasBackend::Replay {
                dir: config.transcript.clone().ok_or("replay needs --transcript")?,
                strict: config.strict_replay,
            },
            BackendKind::Live => MasBackend::Live(Arc::new(live_backend(&config))),
            BackendKind::Record => MasBackend::Record {
                inner: Arc::new(live_backend(&config)),
                dir: config.transcript.clone().ok_or("record needs --transcript")?,
            },
        })
    } else {
        None
    };
    let eval_config = EvalConfig {
        algorithms,
        vszz_threshold: config.vszz_threshold,
        parallelism: config.parallelism,
        context_lines: config.context_lines,
        pipeline: config.pipeline,
        prompts: prompts(&config)?,
        mas_backend,
    };
    let name = dataset.file_name().map_or_else(|| dataset.display().to_string(), |n| n.to_string_lossy().into_owned());
    let report = run_evaluation(&name, &ready, skipped, &eval_config);

    let json = serde_json::to_string_pretty(&report).map_err(|e| e.to_string())?;
    let markdown = render_table(&report, TableFormat::Markdown);
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| format!("creating {}: {e}", dir.display()))?;
        write_file(&dir.join("report.json"), &json)?;
        write_file(&dir.join("report.md"), &markdown)?;
        write_file(&dir.join("report.csv"), &render_table(&report, TableFormat::Csv))?;
    }
    {
        let mut stdout = std::io::stdout().lock();
        let _ = match format {
            OutputFormat::Json => writeln!(stdout, "{json}"),
            OutputFormat::Table => write!(stdout, "{markdown}"),
        };
    }
    let failures: Vec<_> = report.per_case.iter().filter(|o| o.error.is_some()).collect();
    for f in &failures {
        eprintln!("{} / {}: {}", f.cve_id, f.algorithm, f.error.as_deref().unwrap_or(""));
    }
    if report.per_case.len() == failures.len() {
        return Err("no case completed".into());
    }
    Ok(EXIT_OK)
}

fn cmd_convert(input: &Path, repo_prefix: Option<&str>) -> Result<u8, String> {
    let file = std::fs::File::open(input).map_err(|e| format!("opening {}: {e}", input.display()))?;
    let cases = convert_csv(file, repo_prefix).map_err(|e| e.to_string())?;
    write_dataset(&cases, std::io::stdout().lock()).map_err(|e| e.to_string())?;
    Ok(EXIT_OK)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let file = cli.config.as_deref();
    let result = match cli.command {
        Command::Trace(args) => cmd_trace(args, file, cli.format, false),
        Command::Record(args) => cmd_trace(args, file, cli.format, true),
        Command::Baseline {
            algorithm,
            repo,
            fix,
            settings,
        } => cmd_baseline(algorithm, &repo, &fix, file, settings, cli.format),
        Command::Eval {
            dataset,
            algorithms,
            out,
            settings,
        } => cmd_eval(&dataset, algorithms, out.as_deref(), file, settings, cli.format),
        Command::Convert { input, repo_prefix } => cmd_convert(&input, repo_prefix.as_deref()),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
