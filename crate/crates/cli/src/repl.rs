//! Interactive turn-entry session for manual probing.
//!
//! One utterance per line; the engine's thoughts, actions, validation
//! verdicts, and the resulting state print after each turn. Meta-commands:
//! `:state`, `:reset`, `:quit`.

use std::io::{BufRead, Write};

use reactod_core::{
    run_turn, CompletionBackend, EngineConfig, HttpBackend, LoggedTurn, Schema, ScriptedBackend,
    ScriptedFixture, TurnContext,
};

use crate::{read_to_string, BackendKind, Failure, ReplArgs, EXIT_CONFIG};

pub fn run(args: ReplArgs) -> Result<(), Failure> {
    let schema = crate::load_schema_file(&args.schema)?;
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
    let config = EngineConfig {
        k_max: args.k_max.max(1),
        ..EngineConfig::default()
    };
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    session(
        &schema,
        backend.as_ref(),
        &config,
        stdin.lock(),
        stdout.lock(),
    )
    .map_err(|e| Failure::config(format!("io error: {e}")))
}

fn print_state(output: &mut impl Write, state: &reactod_core::BeliefState) -> std::io::Result<()> {
    if state.is_empty() {
        writeln!(output, "state: (empty)")
    } else {
        writeln!(output, "state:")?;
        for (slot, value) in &state.entries {
            writeln!(output, "  {slot}: {} (raw: {})", value.norm, value.raw)?;
        }
        Ok(())
    }
}

/// Runs the session over arbitrary line-oriented input and output, so tests
/// can drive it without a terminal.
pub fn session(
    schema: &Schema,
    backend: &dyn CompletionBackend,
    config: &EngineConfig,
    input: impl BufRead,
    mut output: impl Write,
) -> std::io::Result<()> {
    let mut state = reactod_core::BeliefState::new();
    let mut intents: Vec<String> = Vec::new();
    let mut log: Vec<LoggedTurn> = Vec::new();

    write!(output, "> ")?;
    output.flush()?;
    for line in input.lines() {
        let line = line?;
        let line = line.trim();
        match line {
            "" => {}
            ":quit" => {
                writeln!(output, "bye")?;
                return Ok(());
            }
            ":state" => print_state(&mut output, &state)?,
            ":reset" => {
                state = reactod_core::BeliefState::new();
                intents.clear();
                log.clear();
                writeln!(output, "state reset")?;
            }
            utterance => {
                let ctx = TurnContext {
                    user_utterance: utterance.to_string(),
                    prev_system_action: String::new(),
                    prev_state: state.clone(),
                    prev_intents: intents.clone(),
                    dialogue_log: log.clone(),
                };
                let outcome = run_turn(&ctx, schema, backend, config);
                for (index, step) in outcome.trace.steps.iter().enumerate() {
                    writeln!(output, "[step {}] thought: {}", index + 1, step.thought)?;
                    if let Some(call) = &step.call {
                        writeln!(
                            output,
                            "         action: {} {}",
                            call.tool.wire_name(),
                            call.arguments
                        )?;
                    }
                    for violation in step.outcome.iter().flat_map(|o| o.violations().iter()) {
                        writeln!(output, "         violation: {}", violation.message)?;
                    }
                    writeln!(output, "         observation: {}", step.observation)?;
                }
                if outcome.degraded {
                    writeln!(output, "turn degraded: state unchanged")?;
                } else {
                    writeln!(output, "intent: {}", outcome.intent)?;
                }
                state = outcome.new_state.clone();
                if !outcome.delta.is_empty() && !intents.contains(&outcome.intent) {
                    intents.push(outcome.intent.clone());
                }
                log.push(LoggedTurn {
                    user: utterance.to_string(),
                    system: String::new(),
                });
                print_state(&mut output, &state)?;
            }
        }
        write!(output, "> ")?;
        output.flush()?;
    }
    Ok(())
}
