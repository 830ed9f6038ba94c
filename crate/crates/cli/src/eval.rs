//! Batch evaluation: run every dialogue of a dataset through the engine,
//! write the trace file, and build both report renderings.
//!
//! Dialogues run on `concurrency` worker threads; traces are collected,
//! re-ordered by dialogue index, and written by a single writer so the output
//! bytes never depend on scheduling.

use std::fs;
use std::sync::mpsc;
use std::sync::Mutex;

use serde::Serialize;

use reactod_core::{
    build_report, load_multiwoz, load_sgd, render_text_report, report_to_json, CompletionBackend,
    Dialogue, EngineConfig, GoldTurn, HttpBackend, ScriptedBackend, ScriptedFixture, TraceFile,
    TraceRecord,
};

use crate::{read_to_string, BackendKind, DatasetKind, EvalArgs, Failure, EXIT_CONFIG};

/// The resolved run configuration, embedded in the trace header and in every
/// report for reproducibility. Carries exactly the settings that determine
/// the run's results; invocation details like the output directory or the
/// worker count cannot change a single output byte and stay out, so reports
/// from equivalent runs compare byte-for-byte.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub schema_path: String,
    pub dataset: String,
    pub dataset_path: String,
    pub backend: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixture: Option<String>,
    pub mode: String,
    pub k_max: usize,
    pub temperature: f64,
    pub fuzzy_threshold: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub limit: Option<usize>,
}

pub fn run(args: EvalArgs) -> Result<(), Failure> {
    if args.concurrency < 1 {
        return Err(Failure::config("--concurrency must be at least 1"));
    }
    let schema = crate::load_schema_file(&args.schema)?;
    let mode = args.mode.to_mode();
    let config = EngineConfig {
        k_max: args.k_max.max(1),
        temperature: args.temperature,
        mode,
        ..EngineConfig::default()
    };

    let mut dialogues = match args.dataset {
        DatasetKind::Multiwoz => load_multiwoz(&args.data_path),
        DatasetKind::Sgd => load_sgd(&args.data_path),
    }
    .map_err(|e| Failure::data(e.to_string()))?;
    if let Some(limit) = args.limit {
        dialogues.truncate(limit);
    }
    if dialogues.is_empty() {
        return Err(Failure::data("dataset contains no dialogues"));
    }

    let backend: Box<dyn CompletionBackend> = match args.backend {
        BackendKind::Http => {
            Box::new(HttpBackend::from_env().map_err(|e| Failure::config(e.to_string()))?)
        }
        BackendKind::Scripted => {
            let path = args
                .fixture
                .as_ref()
                .ok_or_else(|| Failure::config("--fixture is required with --backend scripted"))?;
            let fixture = ScriptedFixture::from_jsonl(&read_to_string(path, EXIT_CONFIG)?)
                .map_err(|e| Failure::config(e.to_string()))?;
            Box::new(ScriptedBackend::new(fixture))
        }
    };

    let manifest = RunManifest {
        schema_path: args.schema.display().to_string(),
        dataset: format!("{:?}", args.dataset).to_lowercase(),
        dataset_path: args.data_path.display().to_string(),
        backend: format!("{:?}", args.backend).to_lowercase(),
        fixture: args.fixture.as_ref().map(|p| p.display().to_string()),
        mode: mode.tag().to_string(),
        k_max: config.k_max,
        temperature: config.temperature,
        fuzzy_threshold: args.fuzzy_threshold,
        limit: args.limit,
    };
    let manifest_value = serde_json::to_value(&manifest).expect("manifest serialization");

    fs::create_dir_all(&args.out)
        .map_err(|e| Failure::config(format!("cannot create {}: {e}", args.out.display())))?;

    let records = run_dialogues(
        &dialogues,
        &schema,
        backend.as_ref(),
        &config,
        args.concurrency,
    );

    let trace_file = TraceFile::new(manifest_value.clone(), records);
    fs::write(args.out.join("traces.jsonl"), trace_file.to_jsonl())
        .map_err(|e| Failure::config(e.to_string()))?;

    let report = build_report(
        manifest_value,
        &trace_file.records,
        Some(&schema),
        args.fuzzy_threshold,
    )
    .map_err(|e| Failure::data(e.to_string()))?;
    fs::write(args.out.join("report.json"), report_to_json(&report))
        .map_err(|e| Failure::config(e.to_string()))?;
    let text = render_text_report(&report);
    fs::write(args.out.join("report.txt"), &text).map_err(|e| Failure::config(e.to_string()))?;
    print!("{text}");
    Ok(())
}

/// Runs dialogues across worker threads and returns trace records in
/// deterministic (dialogue, turn) order regardless of scheduling.
pub fn run_dialogues(
    dialogues: &[Dialogue],
    schema: &reactod_core::Schema,
    backend: &dyn CompletionBackend,
    config: &EngineConfig,
    concurrency: usize,
) -> Vec<TraceRecord> {
    let jobs: Vec<(usize, &Dialogue)> = dialogues.iter().enumerate().collect();
    let queue = Mutex::new(jobs.into_iter());
    let (sender, receiver) = mpsc::channel::<(usize, Vec<TraceRecord>)>();

    std::thread::scope(|scope| {
        for _ in 0..concurrency.max(1) {
            let sender = sender.clone();
            let queue = &queue;
            scope.spawn(move || loop {
                let job = queue.lock().expect("job queue poisoned").next();
                let Some((index, dialogue)) = job else { break };
                let records = run_one_dialogue(dialogue, schema, backend, config);
                if sender.send((index, records)).is_err() {
                    break;
                }
            });
        }
        drop(sender);
    });

    let mut collected: Vec<(usize, Vec<TraceRecord>)> = receiver.iter().collect();
    collected.sort_by_key(|(index, _)| *index);
    collected
        .into_iter()
        .flat_map(|(_, records)| records)
        .collect()
}

fn run_one_dialogue(
    dialogue: &Dialogue,
    schema: &reactod_core::Schema,
    backend: &dyn CompletionBackend,
    config: &EngineConfig,
) -> Vec<TraceRecord> {
    let result = reactod_core::run_dialogue(&dialogue.turns, schema, backend, config);
    result
        .turns
        .iter()
        .map(|record| {
            let frames: Vec<&GoldTurn> = dialogue
                .turns
                .iter()
                .filter(|g| g.turn == record.turn)
                .collect();
            TraceRecord::from_turn(
                &dialogue.dialogue_id,
                record.turn,
                config.mode,
                &record.outcome,
            )
            .with_gold(&frames)
        })
        .collect()
}
