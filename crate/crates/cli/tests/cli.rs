//! End-to-end tests of the command-line interface, driven through the
//! compiled binary with a scripted backend.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use reactod_core::{
    load_schema, run_dialogue, CompletionBackend, CompletionResult, EngineConfig, RecordingBackend,
    Schema, TurnScriptBackend,
};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_reactod"))
}

fn repo_path(relative: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .join(relative)
}

fn derive_schema_into(dir: &Path) -> PathBuf {
    let out = dir.join("multiwoz_schema.json");
    let status = bin()
        .args([
            "derive-schema",
            "--dataset",
            "multiwoz",
            "--raw",
            repo_path("data/multiwoz22_schema.json").to_str().unwrap(),
            "--types",
            repo_path("data/multiwoz_slot_types.json").to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])
        .status()
        .expect("derive-schema runs");
    assert!(status.success());
    out
}

fn ic_text(intent: &str) -> String {
    format!(
        "Thought: classify\nAction: intent_classify\nAction Input: {{\"intent\": \"{intent}\"}}"
    )
}

fn sr_text(pairs: &[(&str, &str)]) -> String {
    let entries: Vec<String> = pairs
        .iter()
        .map(|(slot, norm)| {
            format!("{{\"slot\": \"{slot}\", \"raw\": \"{norm}\", \"norm\": \"{norm}\"}}")
        })
        .collect();
    format!(
        "Thought: extract\nAction: slot_resolve\nAction Input: {{\"extractions\": [{}]}}",
        entries.join(", ")
    )
}

/// Records a perfect-prediction session over the mini MultiWOZ fixture and
/// writes it as a keyed replay fixture.
fn record_fixture(schema: &Schema, out: &Path) {
    let scripts: Vec<Vec<String>> = vec![
        // MINI0001
        vec![
            ic_text("hotel"),
            sr_text(&[("hotel-area", "north"), ("hotel-pricerange", "cheap")]),
        ],
        vec![ic_text("hotel"), sr_text(&[("hotel-bookpeople", "2")])],
        vec![
            ic_text("train"),
            sr_text(&[("train-destination", "cambridge"), ("train-day", "friday")]),
        ],
        // MINI0002
        vec![
            ic_text("restaurant"),
            sr_text(&[
                ("restaurant-pricerange", "expensive"),
                ("restaurant-area", "dontcare"),
            ]),
        ],
        vec![
            ic_text("attraction"),
            sr_text(&[("attraction-area", "centre")]),
        ],
    ];
    let policy = TurnScriptBackend::new(
        scripts
            .iter()
            .map(|turn| {
                turn.iter()
                    .map(|text| CompletionResult::from_text(text.clone()))
                    .collect()
            })
            .collect(),
    );
    let recorder = RecordingBackend::new(policy);
    let dialogues = reactod_core::load_multiwoz(&repo_path("fixtures/multiwoz_mini")).unwrap();
    let config = EngineConfig::default();
    for dialogue in &dialogues {
        run_dialogue(
            &dialogue.turns,
            schema,
            &recorder as &dyn CompletionBackend,
            &config,
        );
    }
    fs::write(out, recorder.fixture().to_jsonl()).unwrap();
}

#[test]
fn derive_schema_produces_the_five_domains_plus_fallback() {
    let dir = tempfile::tempdir().unwrap();
    let schema_path = derive_schema_into(dir.path());
    let schema = load_schema(&fs::read_to_string(&schema_path).unwrap()).unwrap();
    assert_eq!(schema.intents.len(), 6);
    assert!(schema.intent("hotel").is_some());
    assert!(schema.intent("general").is_some());
    let area = schema.slot_def("hotel-area").unwrap();
    assert!(area.slot_type.enum_contains("north"));
    assert!(!area.slot_type.enum_contains("cambridge"));
    // 30 canonical slots across the five domains
    let slot_count: usize = schema.intents.iter().map(|i| i.slots.len()).sum();
    assert_eq!(slot_count, 30);
}

#[test]
fn eval_is_deterministic_idempotent_and_concurrency_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let schema_path = derive_schema_into(dir.path());
    let schema = load_schema(&fs::read_to_string(&schema_path).unwrap()).unwrap();
    let fixture = dir.path().join("fixture.jsonl");
    record_fixture(&schema, &fixture);

    let run_eval = |out: &str, concurrency: &str| {
        let out_dir = dir.path().join(out);
        let status = bin()
            .args([
                "eval",
                "--schema",
                schema_path.to_str().unwrap(),
                "--dataset",
                "multiwoz",
                "--data-path",
                repo_path("fixtures/multiwoz_mini").to_str().unwrap(),
                "--backend",
                "scripted",
                "--fixture",
                fixture.to_str().unwrap(),
                "--concurrency",
                concurrency,
                "--out",
                out_dir.to_str().unwrap(),
            ])
            .stdout(Stdio::null())
            .status()
            .expect("eval runs");
        assert!(status.success());
        out_dir
    };

    let first = run_eval("run1", "1");
    for artifact in ["traces.jsonl", "report.json", "report.txt"] {
        assert!(first.join(artifact).exists(), "{artifact} missing");
    }

    // the scripted session tracked every turn perfectly
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(first.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["jga"]["overall"], serde_json::json!(1.0));
    assert_eq!(report["turns"], serde_json::json!(5));
    // the run embeds its resolved manifest
    assert_eq!(report["manifest"]["mode"], serde_json::json!("full"));
    assert_eq!(report["manifest"]["k_max"], serde_json::json!(6));

    // replay determinism: a second run produces byte-identical artifacts
    let second = run_eval("run2", "1");
    assert_eq!(
        fs::read(first.join("traces.jsonl")).unwrap(),
        fs::read(second.join("traces.jsonl")).unwrap()
    );
    assert_eq!(
        fs::read(first.join("report.json")).unwrap(),
        fs::read(second.join("report.json")).unwrap()
    );

    // concurrency invariance
    let concurrent = run_eval("run8", "8");
    assert_eq!(
        fs::read(first.join("report.json")).unwrap(),
        fs::read(concurrent.join("report.json")).unwrap()
    );
    assert_eq!(
        fs::read(first.join("traces.jsonl")).unwrap(),
        fs::read(concurrent.join("traces.jsonl")).unwrap()
    );

    // report idempotence: rebuilding from traces alone matches byte-for-byte
    let rebuilt = dir.path().join("rebuilt");
    let status = bin()
        .args([
            "report",
            first.join("traces.jsonl").to_str().unwrap(),
            "--schema",
            schema_path.to_str().unwrap(),
            "--out",
            rebuilt.to_str().unwrap(),
        ])
        .stdout(Stdio::null())
        .status()
        .expect("report runs");
    assert!(status.success());
    assert_eq!(
        fs::read(first.join("report.json")).unwrap(),
        fs::read(rebuilt.join("report.json")).unwrap()
    );
}

#[test]
fn eval_scores_sgd_frames_per_service() {
    let dir = tempfile::tempdir().unwrap();
    let schema_path = dir.path().join("sgd_schema.json");
    let status = bin()
        .args([
            "derive-schema",
            "--dataset",
            "sgd",
            "--raw",
            repo_path("fixtures/sgd_mini/schema.json").to_str().unwrap(),
            "--out",
            schema_path.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let schema = load_schema(&fs::read_to_string(&schema_path).unwrap()).unwrap();

    // record a perfect-prediction session over the mini SGD corpus
    let scripts: Vec<Vec<String>> = vec![
        // 1_00000: restaurant search, then an attraction in a second service
        vec![
            ic_text("restaurants_1-findrestaurants"),
            sr_text(&[
                ("restaurants_1-city", "san jose"),
                ("restaurants_1-cuisine", "italian"),
            ]),
        ],
        vec![
            ic_text("travel_1-findattractions"),
            sr_text(&[
                ("travel_1-location", "san jose"),
                ("travel_1-category", "museum"),
            ]),
        ],
        // 1_00001
        vec![
            ic_text("travel_1-findattractions"),
            sr_text(&[
                ("travel_1-location", "sacramento"),
                ("travel_1-category", "park"),
            ]),
        ],
    ];
    let policy = TurnScriptBackend::new(
        scripts
            .iter()
            .map(|turn| {
                turn.iter()
                    .map(|text| CompletionResult::from_text(text.clone()))
                    .collect()
            })
            .collect(),
    );
    let recorder = RecordingBackend::new(policy);
    let dialogues = reactod_core::load_sgd(&repo_path("fixtures/sgd_mini")).unwrap();
    for dialogue in &dialogues {
        run_dialogue(
            &dialogue.turns,
            &schema,
            &recorder as &dyn CompletionBackend,
            &EngineConfig::default(),
        );
    }
    let fixture = dir.path().join("fixture.jsonl");
    fs::write(&fixture, recorder.fixture().to_jsonl()).unwrap();

    let out_dir = dir.path().join("run");
    let status = bin()
        .args([
            "eval",
            "--schema",
            schema_path.to_str().unwrap(),
            "--dataset",
            "sgd",
            "--data-path",
            repo_path("fixtures/sgd_mini").to_str().unwrap(),
            "--backend",
            "scripted",
            "--fixture",
            fixture.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ])
        .stdout(Stdio::null())
        .status()
        .unwrap();
    assert!(status.success());

    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["jga"]["overall"], serde_json::json!(1.0));
    assert_eq!(report["jga"]["service_avg"], serde_json::json!(1.0));
    assert_eq!(
        report["jga"]["per_service"]["restaurants_1"],
        serde_json::json!(1.0)
    );
    assert_eq!(
        report["jga"]["per_service"]["travel_1"],
        serde_json::json!(1.0)
    );
    // the multi-frame turn produced two frame units in the trace
    let traces = fs::read_to_string(out_dir.join("traces.jsonl")).unwrap();
    let multi_frame = traces
        .lines()
        .filter(|l| l.contains("\"frames\""))
        .any(|l| {
            let v: serde_json::Value = serde_json::from_str(l).unwrap();
            v["frames"].as_array().map(|f| f.len()) == Some(2)
        });
    assert!(multi_frame, "expected a two-frame turn in the traces");
}

#[test]
fn report_pools_concatenated_traces_and_names_bad_lines() {
    let dir = tempfile::tempdir().unwrap();
    let schema_path = derive_schema_into(dir.path());
    let schema = load_schema(&fs::read_to_string(&schema_path).unwrap()).unwrap();
    let fixture = dir.path().join("fixture.jsonl");
    record_fixture(&schema, &fixture);

    let out_dir = dir.path().join("run");
    let status = bin()
        .args([
            "eval",
            "--schema",
            schema_path.to_str().unwrap(),
            "--dataset",
            "multiwoz",
            "--data-path",
            repo_path("fixtures/multiwoz_mini").to_str().unwrap(),
            "--backend",
            "scripted",
            "--fixture",
            fixture.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ])
        .stdout(Stdio::null())
        .status()
        .unwrap();
    assert!(status.success());

    // two concatenated runs pool into doubled counts
    let traces = fs::read_to_string(out_dir.join("traces.jsonl")).unwrap();
    let pooled_path = dir.path().join("pooled.jsonl");
    fs::write(&pooled_path, format!("{traces}{traces}")).unwrap();
    let pooled_out = dir.path().join("pooled");
    let status = bin()
        .args([
            "report",
            pooled_path.to_str().unwrap(),
            "--schema",
            schema_path.to_str().unwrap(),
            "--out",
            pooled_out.to_str().unwrap(),
        ])
        .stdout(Stdio::null())
        .status()
        .unwrap();
    assert!(status.success());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(pooled_out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["turns"], serde_json::json!(10));

    // a truncated line fails loudly, naming the line number
    let truncated_path = dir.path().join("truncated.jsonl");
    let mut truncated = traces.clone();
    truncated.push_str("{\"dialogue_id\": \"broken\"");
    fs::write(&truncated_path, truncated).unwrap();
    let output = bin()
        .args(["report", truncated_path.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("line 7"), "stderr was: {stderr}");
}

#[test]
fn exit_codes_distinguish_config_and_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    // missing schema file: configuration error
    let status = bin()
        .args([
            "eval",
            "--schema",
            dir.path().join("nope.json").to_str().unwrap(),
            "--dataset",
            "multiwoz",
            "--data-path",
            repo_path("fixtures/multiwoz_mini").to_str().unwrap(),
            "--backend",
            "scripted",
            "--fixture",
            "unused.jsonl",
            "--out",
            dir.path().join("out").to_str().unwrap(),
        ])
        .stderr(Stdio::null())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));

    // unreadable dataset directory: dataset error
    let schema_path = derive_schema_into(dir.path());
    let status = bin()
        .args([
            "eval",
            "--schema",
            schema_path.to_str().unwrap(),
            "--dataset",
            "multiwoz",
            "--data-path",
            dir.path().join("no_dataset_here").to_str().unwrap(),
            "--backend",
            "scripted",
            "--fixture",
            "unused.jsonl",
            "--out",
            dir.path().join("out").to_str().unwrap(),
        ])
        .stderr(Stdio::null())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(3));
}

#[test]
fn repl_transcript_matches_golden() {
    let dir = tempfile::tempdir().unwrap();
    let schema_path = dir.path().join("schema.json");
    fs::write(
        &schema_path,
        r#"{
            "name": "mini",
            "fallback_intent": "general",
            "intents": [
                {"id": "hotel", "description": "find and book hotels", "transactional": true,
                 "slots": [
                    {"id": "hotel-area", "description": "area of town", "type": "categorical",
                     "role": "filter", "values": ["centre", "east", "north", "south", "west"]},
                    {"id": "hotel-pricerange", "description": "price range", "type": "categorical",
                     "role": "filter", "values": ["cheap", "moderate", "expensive"]}
                 ]},
                {"id": "general", "description": "anything else", "transactional": false}
            ]
        }"#,
    )
    .unwrap();
    let fixture_path = dir.path().join("repl_fixture.jsonl");
    fs::write(
        &fixture_path,
        concat!(
            r#"{"response_text": "Thought: classify\nAction: intent_classify\nAction Input: {\"intent\": \"hotel\"}", "output_tokens": 9}"#,
            "\n",
            r#"{"response_text": "Thought: extract\nAction: slot_resolve\nAction Input: {\"extractions\": [{\"slot\": \"hotel-area\", \"raw\": \"the north\", \"norm\": \"north\"}, {\"slot\": \"hotel-pricerange\", \"raw\": \"cheap\", \"norm\": \"cheap\"}]}", "output_tokens": 24}"#,
            "\n",
        ),
    )
    .unwrap();

    let mut child = bin()
        .args([
            "repl",
            "--schema",
            schema_path.to_str().unwrap(),
            "--backend",
            "scripted",
            "--fixture",
            fixture_path.to_str().unwrap(),
        ])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    use std::io::Write;
    child
        .stdin
        .take()
        .unwrap()
        .write_all(b"i need a cheap hotel in the north\n:state\n:reset\n\n:state\n:quit\n")
        .unwrap();
    let output = child.wait_with_output().unwrap();
    assert!(output.status.success());
    let transcript = String::from_utf8(output.stdout).unwrap();

    let golden = "\
> [step 1] thought: classify
         action: intent_classify {\"intent\":\"hotel\"}
         observation: - hotel-area | area of town | categorical {centre, east, north, south, west} | filter
- hotel-pricerange | price range | categorical {cheap, moderate, expensive} | filter
[step 2] thought: extract
         action: slot_resolve {\"extractions\":[{\"norm\":\"north\",\"raw\":\"the north\",\"slot\":\"hotel-area\"},{\"norm\":\"cheap\",\"raw\":\"cheap\",\"slot\":\"hotel-pricerange\"}]}
         observation: (delta committed)
intent: hotel
state:
  hotel-area: north (raw: the north)
  hotel-pricerange: cheap (raw: cheap)
> state:
  hotel-area: north (raw: the north)
  hotel-pricerange: cheap (raw: cheap)
> state reset
> > state: (empty)
> bye
";
    assert_eq!(transcript, golden);
}

#[test]
fn repl_survives_backend_exhaustion() {
    let dir = tempfile::tempdir().unwrap();
    let schema_path = dir.path().join("schema.json");
    fs::write(
        &schema_path,
        r#"{"name": "mini", "fallback_intent": "general",
            "intents": [{"id": "general", "description": "g", "transactional": false}]}"#,
    )
    .unwrap();
    let fixture_path = dir.path().join("empty.jsonl");
    fs::write(&fixture_path, "").unwrap();
    let mut child = bin()
        .args([
            "repl",
            "--schema",
            schema_path.to_str().unwrap(),
            "--backend",
            "scripted",
            "--fixture",
            fixture_path.to_str().unwrap(),
        ])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    use std::io::Write;
    child
        .stdin
        .take()
        .unwrap()
        .write_all(b"hello\n:quit\n")
        .unwrap();
    let output = child.wait_with_output().unwrap();
    assert!(output.status.success());
    let transcript = String::from_utf8(output.stdout).unwrap();
    assert!(transcript.contains("turn degraded: state unchanged"));
    assert!(transcript.ends_with("> bye\n"));
}
