//! Operator entry points: batch evaluation, report rendering, schema
//! derivation, and an interactive probing REPL.

mod eval;
mod repl;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use reactod_core::{
    build_report, derive_multiwoz_schema, derive_sgd_schema, load_schema, parse_type_annotations,
    render_text_report, report_to_json, EngineMode, TraceFile, DEFAULT_FUZZY_THRESHOLD,
};

/// Exit code for configuration problems (flags, schema files, fixtures).
const EXIT_CONFIG: u8 = 2;
/// Exit code for dataset and trace ingestion problems.
const EXIT_DATA: u8 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "reactod",
    about = "Validator-gated dialogue state tracking",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a dataset through the engine and write traces plus reports.
    Eval(EvalArgs),
    /// Rebuild a report from an existing trace file.
    Report(ReportArgs),
    /// Derive a schema file from source service definitions.
    DeriveSchema(DeriveSchemaArgs),
    /// Interactive turn-entry session against a configured backend.
    Repl(ReplArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DatasetKind {
    Multiwoz,
    Sgd,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BackendKind {
    Http,
    Scripted,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Full,
    Noloop,
    Novalidator,
}

impl ModeArg {
    fn to_mode(self) -> EngineMode {
        match self {
            ModeArg::Full => EngineMode::FullLoop,
            ModeArg::Noloop => EngineMode::NoLoop,
            ModeArg::Novalidator => EngineMode::LoopNoValidator,
        }
    }
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Schema file in the canonical JSON format.
    #[arg(long)]
    schema: PathBuf,
    #[arg(long, value_enum)]
    dataset: DatasetKind,
    /// Dataset directory (MultiWOZ distribution dir or SGD test dir).
    #[arg(long)]
    data_path: PathBuf,
    #[arg(long, value_enum, default_value = "full")]
    mode: ModeArg,
    #[arg(long, default_value_t = 6)]
    k_max: usize,
    #[arg(long, default_value_t = 0.0)]
    temperature: f64,
    #[arg(long, value_enum, default_value = "http")]
    backend: BackendKind,
    /// Scripted fixture (JSONL) when --backend scripted.
    #[arg(long)]
    fixture: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    concurrency: usize,
    /// Output directory for traces.jsonl, report.json, report.txt.
    #[arg(long)]
    out: PathBuf,
    /// Limit to the first N dialogues.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_FUZZY_THRESHOLD)]
    fuzzy_threshold: f64,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Trace file produced by eval.
    traces: PathBuf,
    /// Schema file; required to recompute accuracy sections.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Directory to write report.json and report.txt into; stdout only when
    /// omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_FUZZY_THRESHOLD)]
    fuzzy_threshold: f64,
}

#[derive(Debug, Args)]
struct DeriveSchemaArgs {
    #[arg(long, value_enum)]
    dataset: DatasetKind,
    /// Source service definitions (MultiWOZ 2.2 schema.json or SGD schema.json).
    #[arg(long)]
    raw: PathBuf,
    /// Slot type annotation file; required for multiwoz.
    #[arg(long)]
    types: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ReplArgs {
    #[arg(long)]
    schema: PathBuf,
    #[arg(long, value_enum, default_value = "http")]
    backend: BackendKind,
    #[arg(long)]
    fixture: Option<PathBuf>,
    #[arg(long, default_value_t = 6)]
    k_max: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Eval(args) => eval::run(args),
        Command::Report(args) => cmd_report(args),
        Command::DeriveSchema(args) => cmd_derive_schema(args),
        Command::Repl(args) => repl::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.exit)
        }
    }
}

struct Failure {
    exit: u8,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Failure {
        Failure {
            exit: EXIT_CONFIG,
            message: message.into(),
        }
    }

    fn data(message: impl Into<String>) -> Failure {
        Failure {
            exit: EXIT_DATA,
            message: message.into(),
        }
    }
}

fn read_to_string(path: &PathBuf, exit: u8) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure {
        exit,
        message: format!("cannot read {}: {e}", path.display()),
    })
}

fn load_schema_file(path: &PathBuf) -> Result<reactod_core::Schema, Failure> {
    let raw = read_to_string(path, EXIT_CONFIG)?;
    load_schema(&raw).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

fn cmd_report(args: ReportArgs) -> Result<(), Failure> {
    let raw = read_to_string(&args.traces, EXIT_DATA)?;
    let parsed = TraceFile::from_jsonl(&raw).map_err(|e| Failure::data(e.to_string()))?;
    let schema = match &args.schema {
        Some(path) => Some(load_schema_file(path)?),
        None => None,
    };
    let manifest = parsed.manifest.clone().unwrap_or(serde_json::Value::Null);
    let report = build_report(
        manifest,
        &parsed.records,
        schema.as_ref(),
        args.fuzzy_threshold,
    )
    .map_err(|e| Failure::data(e.to_string()))?;
    let text = render_text_report(&report);
    if let Some(out) = &args.out {
        fs::create_dir_all(out)
            .map_err(|e| Failure::config(format!("cannot create {}: {e}", out.display())))?;
        fs::write(out.join("report.json"), report_to_json(&report))
            .map_err(|e| Failure::config(e.to_string()))?;
        fs::write(out.join("report.txt"), &text).map_err(|e| Failure::config(e.to_string()))?;
    }
    print!("{text}");
    Ok(())
}

fn cmd_derive_schema(args: DeriveSchemaArgs) -> Result<(), Failure> {
    let raw = read_to_string(&args.raw, EXIT_DATA)?;
    let schema = match args.dataset {
        DatasetKind::Multiwoz => {
            let types_path = args
                .types
                .as_ref()
                .ok_or_else(|| Failure::config("--types is required for multiwoz"))?;
            let annotations = parse_type_annotations(&read_to_string(types_path, EXIT_CONFIG)?)
                .map_err(|e| Failure::config(e.to_string()))?;
            derive_multiwoz_schema(&raw, &annotations).map_err(|e| Failure::data(e.to_string()))?
        }
        DatasetKind::Sgd => derive_sgd_schema(&raw).map_err(|e| Failure::data(e.to_string()))?,
    };
    fs::write(&args.out, schema.to_file_json())
        .map_err(|e| Failure::config(format!("cannot write {}: {e}", args.out.display())))?;
    println!(
        "wrote {} ({} intents)",
        args.out.display(),
        schema.intents.len()
    );
    Ok(())
}
