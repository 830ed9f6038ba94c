//! The bounded reasoning loop: context construction, step parsing, validation
//! gating, feedback injection, termination, and deferred state commit.
//!
//! One engine invocation processes one dialogue turn. The loop runs at most
//! `k_max` iterations; each iteration sends the in-turn transcript to the
//! backend, parses one proposed action, validates it, and either executes the
//! tool or injects the validator's feedback as the next observation. State is
//! committed exactly once, and only from a validated slot-resolution result.

use serde_json::Value;
use thiserror::Error;

use crate::backend::{ChatMessage, CompletionBackend, CompletionRequest, CompletionResult};
use crate::data::GoldTurn;
use crate::schema::Schema;
use crate::state::{apply_update, BeliefState, SlotValue, StateUpdate, NULL_SENTINEL};
use crate::tools::{
    execute_history_retrieve, execute_intent_classify, execute_slot_resolve, extraction_args,
    history_n_arg, intent_arg, native_signatures, LoggedTurn, SlotExtraction, ToolCall, ToolId,
    ToolName, ToolResult,
};
use crate::validator::{render_feedback, validate, ValidationOutcome, Violation};

/// Feedback injected when a backend step cannot be parsed into an action.
pub const PARSE_FEEDBACK: &str =
    "could not parse action; follow the Thought/Action/Action Input format";

/// Recoverable parse failure; rendered as corrective feedback and charged as
/// one loop iteration.
#[derive(Debug, Error)]
#[error("{0}")]
pub struct ParseFailure(pub String);

/// Per-turn inputs: the current utterance plus the carried dialogue context.
#[derive(Debug, Clone, Default)]
pub struct TurnContext {
    pub user_utterance: String,
    /// Previous system utterance, used to ground implicit acceptances.
    pub prev_system_action: String,
    pub prev_state: BeliefState,
    /// Intents that have committed updates earlier in this dialogue.
    pub prev_intents: Vec<String>,
    /// Completed prior turns, served verbatim by history retrieval.
    pub dialogue_log: Vec<LoggedTurn>,
}

/// Engine operating mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EngineMode {
    /// Bounded loop with validation gating and feedback.
    FullLoop,
    /// Intent classification and slot resolution as two independent calls;
    /// rejected extractions are dropped, never fed back.
    NoLoop,
    /// Loop active but the validator disabled; tool errors surface as plain
    /// observations and nothing blocks a commit.
    LoopNoValidator,
}

impl EngineMode {
    pub fn tag(&self) -> &'static str {
        match self {
            EngineMode::FullLoop => "full",
            EngineMode::NoLoop => "noloop",
            EngineMode::LoopNoValidator => "novalidator",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "full" => Some(EngineMode::FullLoop),
            "noloop" => Some(EngineMode::NoLoop),
            "novalidator" => Some(EngineMode::LoopNoValidator),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    /// Hard cap on reasoning iterations per turn; must be at least 1.
    pub k_max: usize,
    pub temperature: f64,
    pub mode: EngineMode,
    pub max_output_tokens: u32,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            k_max: 6,
            temperature: 0.0,
            mode: EngineMode::FullLoop,
            max_output_tokens: 1024,
        }
    }
}

/// One reasoning step as recorded in the trace, including rejected ones.
#[derive(Debug, Clone)]
pub struct TraceStep {
    pub thought: String,
    pub call: Option<ToolCall>,
    /// Validation verdict; `None` for parse failures, backend errors, and
    /// steps taken with the validator disabled.
    pub outcome: Option<ValidationOutcome>,
    pub result: Option<ToolResult>,
    /// What was appended to the agent's context after this step: a tool
    /// observation, validator feedback, or a terminal marker.
    pub observation: String,
    pub output_tokens: u64,
    /// Internal annotation for parse/backend/tool errors.
    pub note: Option<String>,
}

/// The action-observation history of one turn.
#[derive(Debug, Clone, Default)]
pub struct AgentTrace {
    pub steps: Vec<TraceStep>,
}

impl AgentTrace {
    pub fn push_validated(
        &mut self,
        thought: &str,
        call: ToolCall,
        outcome: ValidationOutcome,
        result: ToolResult,
        observation: &str,
        output_tokens: u64,
    ) {
        self.steps.push(TraceStep {
            thought: thought.to_string(),
            call: Some(call),
            outcome: Some(outcome),
            result: Some(result),
            observation: observation.to_string(),
            output_tokens,
            note: None,
        });
    }

    pub fn push_rejected(
        &mut self,
        thought: &str,
        call: ToolCall,
        outcome: ValidationOutcome,
        feedback: &str,
        output_tokens: u64,
    ) {
        self.steps.push(TraceStep {
            thought: thought.to_string(),
            call: Some(call),
            outcome: Some(outcome),
            result: None,
            observation: feedback.to_string(),
            output_tokens,
            note: None,
        });
    }

    pub fn push_failure(&mut self, note: &str, observation: &str, output_tokens: u64) {
        self.steps.push(TraceStep {
            thought: String::new(),
            call: None,
            outcome: None,
            result: None,
            observation: observation.to_string(),
            output_tokens,
            note: Some(note.to_string()),
        });
    }

    /// Executed call without a validation verdict (validator-disabled mode).
    pub fn push_unvalidated(
        &mut self,
        thought: &str,
        call: ToolCall,
        result: Option<ToolResult>,
        observation: &str,
        output_tokens: u64,
    ) {
        self.steps.push(TraceStep {
            thought: thought.to_string(),
            call: Some(call),
            outcome: None,
            result,
            observation: observation.to_string(),
            output_tokens,
            note: None,
        });
    }

    /// Call that passed validation but whose executor faulted (for example a
    /// non-positive history size).
    pub fn push_tool_error(
        &mut self,
        thought: &str,
        call: ToolCall,
        observation: &str,
        output_tokens: u64,
    ) {
        self.steps.push(TraceStep {
            thought: thought.to_string(),
            call: Some(call),
            outcome: Some(ValidationOutcome::Pass),
            result: None,
            observation: observation.to_string(),
            output_tokens,
            note: Some(observation.to_string()),
        });
    }

    /// The intent accepted by the most recent successful classification.
    pub fn active_intent(&self) -> Option<&str> {
        self.steps.iter().rev().find_map(|step| match &step.result {
            Some(ToolResult::IntentAccepted { intent_id, .. }) => Some(intent_id.as_str()),
            _ => None,
        })
    }

    pub fn short_circuited(&self) -> bool {
        self.steps
            .iter()
            .any(|step| matches!(step.result, Some(ToolResult::ShortCircuit { .. })))
    }

    /// Every parsed call so far, validated or not.
    pub fn prior_calls(&self) -> impl Iterator<Item = &ToolCall> {
        self.steps.iter().filter_map(|step| step.call.as_ref())
    }

    /// All violations recorded this turn, in step order.
    pub fn violations(&self) -> impl Iterator<Item = &Violation> {
        self.steps
            .iter()
            .filter_map(|step| step.outcome.as_ref())
            .flat_map(|outcome| outcome.violations().iter())
    }
}

/// Result of one turn.
#[derive(Debug, Clone)]
pub struct TurnOutcome {
    pub delta: StateUpdate,
    pub new_state: BeliefState,
    pub intent: String,
    pub trace: AgentTrace,
    /// True when the iteration limit was exhausted (or the backend failed)
    /// without a validated commit; the state is then exactly the prior state.
    pub degraded: bool,
    pub llm_calls: u64,
    pub output_tokens: u64,
}

// ---------------------------------------------------------------------------
// Prompt construction
// ---------------------------------------------------------------------------

/// Deterministic system prompt: role instructions, the classify-then-resolve
/// protocol, tool signatures, and the full intent list with descriptions.
/// Slot definitions and dialogue history are deliberately absent; slots are
/// injected per active intent and history is retrieved on demand.
pub fn build_system_prompt(schema: &Schema) -> String {
    let mut prompt = String::new();
    prompt.push_str(
        "You are the language-understanding component of a task-oriented dialogue system.\n\
         Each turn you identify the user's active intent, then extract the slot values the user supplied or changed this turn.\n\n\
         Protocol:\n\
         1. First call intent_classify with the intent matching the current turn; its slot definitions arrive as the observation.\n\
         2. Then call slot_resolve with one entry per slot value the user gave or changed this turn. Submit an empty list if the turn changes no slot.\n\
         3. Call history_retrieve only when the turn refers to an earlier entity you cannot resolve from the current context.\n\
         4. To remove a previously stored value, submit the null value \"",
    );
    prompt.push_str(NULL_SENTINEL);
    prompt.push_str(
        "\" as the norm.\n\n\
         Each slot_resolve entry is {\"slot\": id, \"raw\": surface form as uttered, \"norm\": canonical value}. Times normalize to HH:MM, dates to YYYY-MM-DD, numbers to digits.\n\n\
         Tools:\n\
         - intent_classify | arguments: {\"intent\": string}\n\
         - slot_resolve | arguments: {\"extractions\": [{\"slot\": string, \"raw\": string, \"norm\": string}]}\n\
         - history_retrieve | arguments: {\"n\": integer >= 1}\n\n\
         Intents:\n",
    );
    for intent in &schema.intents {
        prompt.push_str(&format!("- {}: {}\n", intent.id, intent.description));
    }
    prompt.push_str(
        "\nRespond with exactly one action per step, in this format:\n\
         Thought: <brief reasoning>\n\
         Action: <tool name>\n\
         Action Input: <single-line JSON object>\n",
    );
    prompt
}

/// Deterministic per-turn message: prior belief state, previous system
/// action, previously active intents, and the current utterance. Never
/// includes any other turn of the dialogue.
pub fn build_turn_message(ctx: &TurnContext) -> String {
    let mut message = String::new();
    if ctx.prev_state.is_empty() {
        message.push_str("state: (empty)\n");
    } else {
        message.push_str("state:\n");
        for (slot_id, value) in &ctx.prev_state.entries {
            message.push_str(&format!("  {}: {}\n", slot_id, value.norm));
        }
    }
    let prev_action = if ctx.prev_system_action.is_empty() {
        "(none)"
    } else {
        &ctx.prev_system_action
    };
    message.push_str(&format!("previous system action: {prev_action}\n"));
    if ctx.prev_intents.is_empty() {
        message.push_str("previous intents: (none)\n");
    } else {
        message.push_str(&format!(
            "previous intents: {}\n",
            ctx.prev_intents.join(", ")
        ));
    }
    message.push_str(&format!("user: {}", ctx.user_utterance));
    message
}

// ---------------------------------------------------------------------------
// Step parsing
// ---------------------------------------------------------------------------

/// One parsed agent step.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedStep {
    pub thought: String,
    pub tool: ToolName,
    pub arguments: Value,
}

/// Maps one backend output to a proposed action. Native tool calls are taken
/// directly; text output must follow the Thought/Action/Action Input grammar.
pub fn parse_agent_step(result: &CompletionResult) -> Result<ParsedStep, ParseFailure> {
    if let Some(calls) = &result.native_calls {
        if let Some(call) = calls.first() {
            return Ok(ParsedStep {
                thought: result.text.clone().unwrap_or_default().trim().to_string(),
                tool: ToolName::parse(&call.name),
                arguments: call.arguments.clone(),
            });
        }
    }
    let text = result
        .text
        .as_deref()
        .ok_or_else(|| ParseFailure("backend step carries no output".into()))?;
    parse_react_text(text)
}

fn parse_react_text(text: &str) -> Result<ParsedStep, ParseFailure> {
    let action_pos = text
        .find("Action:")
        .ok_or_else(|| ParseFailure("no Action line".into()))?;
    let thought = text[..action_pos]
        .split_once("Thought:")
        .map(|(_, t)| t.trim().to_string())
        .unwrap_or_default();
    let after_action = &text[action_pos + "Action:".len()..];
    let tool_name = after_action
        .lines()
        .next()
        .map(str::trim)
        .filter(|name| !name.is_empty())
        .ok_or_else(|| ParseFailure("empty Action line".into()))?;
    let input_pos = after_action
        .find("Action Input:")
        .ok_or_else(|| ParseFailure("no Action Input line".into()))?;
    let input_line = after_action[input_pos + "Action Input:".len()..]
        .lines()
        .next()
        .map(str::trim)
        .unwrap_or_default();
    let arguments: Value = serde_json::from_str(input_line)
        .map_err(|e| ParseFailure(format!("Action Input is not valid JSON: {e}")))?;
    if !arguments.is_object() {
        return Err(ParseFailure("Action Input must be a JSON object".into()));
    }
    Ok(ParsedStep {
        thought,
        tool: ToolName::parse(tool_name),
        arguments,
    })
}

/// Deterministic rendering of a step for the transcript; native-path calls
/// are echoed in the text grammar so replays are byte-stable either way.
fn render_assistant_echo(result: &CompletionResult, parsed: Option<&ParsedStep>) -> String {
    if result.native_calls.is_some() {
        if let Some(step) = parsed {
            let args = serde_json::to_string(&step.arguments).unwrap_or_else(|_| "{}".into());
            return format!(
                "Thought: {}\nAction: {}\nAction Input: {}",
                step.thought,
                step.tool.wire_name(),
                args
            );
        }
    }
    result.text.clone().unwrap_or_default()
}

// ---------------------------------------------------------------------------
// Turn execution
// ---------------------------------------------------------------------------

fn extractions_to_update(extractions: &[SlotExtraction]) -> StateUpdate {
    let mut update = StateUpdate::default();
    for extraction in extractions {
        update.set(
            extraction.slot_id.clone(),
            SlotValue::new(extraction.raw.clone(), extraction.norm.clone()),
        );
    }
    update
}

struct LoopState<'a> {
    transcript: Vec<ChatMessage>,
    trace: AgentTrace,
    llm_calls: u64,
    output_tokens: u64,
    ctx: &'a TurnContext,
    turn: usize,
}

impl<'a> LoopState<'a> {
    fn observe(&mut self, observation: &str) {
        self.transcript
            .push(ChatMessage::user(format!("Observation: {observation}")));
    }

    fn commit(self, extractions: &[SlotExtraction], intent: String) -> TurnOutcome {
        let delta = extractions_to_update(extractions);
        let new_state = apply_update(&self.ctx.prev_state, &delta, self.turn);
        TurnOutcome {
            delta,
            new_state,
            intent,
            trace: self.trace,
            degraded: false,
            llm_calls: self.llm_calls,
            output_tokens: self.output_tokens,
        }
    }

    fn short_circuit(self, intent: String) -> TurnOutcome {
        let new_state = apply_update(&self.ctx.prev_state, &StateUpdate::default(), self.turn);
        TurnOutcome {
            delta: StateUpdate::default(),
            new_state,
            intent,
            trace: self.trace,
            degraded: false,
            llm_calls: self.llm_calls,
            output_tokens: self.output_tokens,
        }
    }

    fn degraded(self, fallback_intent: &str) -> TurnOutcome {
        let intent = self
            .trace
            .active_intent()
            .unwrap_or(fallback_intent)
            .to_string();
        TurnOutcome {
            delta: StateUpdate::default(),
            new_state: self.ctx.prev_state.clone(),
            intent,
            trace: self.trace,
            degraded: true,
            llm_calls: self.llm_calls,
            output_tokens: self.output_tokens,
        }
    }
}

/// Runs one dialogue turn under the configured mode.
pub fn run_turn(
    ctx: &TurnContext,
    schema: &Schema,
    backend: &dyn CompletionBackend,
    config: &EngineConfig,
) -> TurnOutcome {
    match config.mode {
        EngineMode::NoLoop => run_turn_noloop(ctx, schema, backend, config),
        EngineMode::FullLoop | EngineMode::LoopNoValidator => {
            run_turn_loop(ctx, schema, backend, config)
        }
    }
}

fn new_loop_state<'a>(ctx: &'a TurnContext, schema: &Schema) -> LoopState<'a> {
    LoopState {
        transcript: vec![
            ChatMessage::system(build_system_prompt(schema)),
            ChatMessage::user(build_turn_message(ctx)),
        ],
        trace: AgentTrace::default(),
        llm_calls: 0,
        output_tokens: 0,
        ctx,
        turn: ctx.dialogue_log.len() + 1,
    }
}

fn next_step(
    state: &mut LoopState,
    backend: &dyn CompletionBackend,
    config: &EngineConfig,
) -> Result<CompletionResult, String> {
    let request = CompletionRequest {
        messages: state.transcript.clone(),
        tool_signatures: Some(native_signatures()),
        temperature: config.temperature,
        max_output_tokens: config.max_output_tokens,
    };
    match backend.complete(&request) {
        Ok(result) => {
            state.llm_calls += 1;
            state.output_tokens += result.output_tokens;
            Ok(result)
        }
        Err(e) => Err(e.to_string()),
    }
}

fn run_turn_loop(
    ctx: &TurnContext,
    schema: &Schema,
    backend: &dyn CompletionBackend,
    config: &EngineConfig,
) -> TurnOutcome {
    let validator_enabled = config.mode != EngineMode::LoopNoValidator;
    let mut state = new_loop_state(ctx, schema);

    for step_index in 0..config.k_max {
        let result = match next_step(&mut state, backend, config) {
            Ok(result) => result,
            Err(error) => {
                let note = format!("backend error: {error}");
                state.trace.push_failure(&note, &note, 0);
                return state.degraded(&schema.fallback_intent_id);
            }
        };
        let tokens = result.output_tokens;

        let parsed = match parse_agent_step(&result) {
            Ok(parsed) => parsed,
            Err(failure) => {
                state
                    .transcript
                    .push(ChatMessage::assistant(render_assistant_echo(&result, None)));
                state.trace.push_failure(&failure.0, PARSE_FEEDBACK, tokens);
                state.observe(PARSE_FEEDBACK);
                continue;
            }
        };
        state
            .transcript
            .push(ChatMessage::assistant(render_assistant_echo(
                &result,
                Some(&parsed),
            )));
        let call = ToolCall {
            tool: parsed.tool.clone(),
            arguments: parsed.arguments.clone(),
            step_index,
        };

        if validator_enabled {
            let outcome = validate(&call, &state.trace, schema);
            if !outcome.passed() {
                let feedback = render_feedback(&outcome).expect("failing outcome");
                state
                    .trace
                    .push_rejected(&parsed.thought, call, outcome, &feedback, tokens);
                state.observe(&feedback);
                continue;
            }
            match execute_call(&call, ctx, schema) {
                Ok(ToolResult::IntentAccepted {
                    intent_id,
                    slot_defs_rendered,
                }) => {
                    let observation = slot_defs_rendered.clone();
                    state.trace.push_validated(
                        &parsed.thought,
                        call,
                        ValidationOutcome::Pass,
                        ToolResult::IntentAccepted {
                            intent_id,
                            slot_defs_rendered,
                        },
                        &observation,
                        tokens,
                    );
                    state.observe(&observation);
                }
                Ok(ToolResult::History { turns_rendered }) => {
                    let observation = turns_rendered.clone();
                    state.trace.push_validated(
                        &parsed.thought,
                        call,
                        ValidationOutcome::Pass,
                        ToolResult::History { turns_rendered },
                        &observation,
                        tokens,
                    );
                    state.observe(&observation);
                }
                Ok(ToolResult::ShortCircuit { intent_id }) => {
                    state.trace.push_validated(
                        &parsed.thought,
                        call,
                        ValidationOutcome::Pass,
                        ToolResult::ShortCircuit {
                            intent_id: intent_id.clone(),
                        },
                        "(short-circuit)",
                        tokens,
                    );
                    return state.short_circuit(intent_id);
                }
                Ok(ToolResult::SlotCandidates(extractions)) => {
                    let intent = state
                        .trace
                        .active_intent()
                        .unwrap_or(&schema.fallback_intent_id)
                        .to_string();
                    state.trace.push_validated(
                        &parsed.thought,
                        call,
                        ValidationOutcome::Pass,
                        ToolResult::SlotCandidates(extractions.clone()),
                        "(delta committed)",
                        tokens,
                    );
                    return state.commit(&extractions, intent);
                }
                Err(tool_error) => {
                    let observation = format!("error: {tool_error}");
                    state
                        .trace
                        .push_tool_error(&parsed.thought, call, &observation, tokens);
                    state.observe(&observation);
                }
            }
        } else {
            // validator disabled: execute whatever parsed, surface tool
            // faults as plain observations, commit any slot resolution
            match execute_call(&call, ctx, schema) {
                Ok(ToolResult::SlotCandidates(extractions)) => {
                    let intent = state
                        .trace
                        .active_intent()
                        .unwrap_or(&schema.fallback_intent_id)
                        .to_string();
                    state.trace.push_unvalidated(
                        &parsed.thought,
                        call,
                        Some(ToolResult::SlotCandidates(extractions.clone())),
                        "(delta committed)",
                        tokens,
                    );
                    return state.commit(&extractions, intent);
                }
                Ok(ToolResult::ShortCircuit { intent_id }) => {
                    state.trace.push_unvalidated(
                        &parsed.thought,
                        call,
                        Some(ToolResult::ShortCircuit {
                            intent_id: intent_id.clone(),
                        }),
                        "(short-circuit)",
                        tokens,
                    );
                    return state.short_circuit(intent_id);
                }
                Ok(result) => {
                    let observation = match &result {
                        ToolResult::IntentAccepted {
                            slot_defs_rendered, ..
                        } => slot_defs_rendered.clone(),
                        ToolResult::History { turns_rendered } => turns_rendered.clone(),
                        _ => unreachable!("terminal results handled above"),
                    };
                    state.trace.push_unvalidated(
                        &parsed.thought,
                        call,
                        Some(result),
                        &observation,
                        tokens,
                    );
                    state.observe(&observation);
                }
                Err(error) => {
                    let observation = format!("error: {error}");
                    state
                        .trace
                        .push_unvalidated(&parsed.thought, call, None, &observation, tokens);
                    state.observe(&observation);
                }
            }
        }
    }
    state.degraded(&schema.fallback_intent_id)
}

fn execute_call(
    call: &ToolCall,
    ctx: &TurnContext,
    schema: &Schema,
) -> Result<ToolResult, crate::tools::ToolError> {
    match call.tool {
        ToolName::Known(ToolId::IntentClassify) => {
            execute_intent_classify(intent_arg(&call.arguments).unwrap_or_default(), schema)
        }
        ToolName::Known(ToolId::SlotResolve) => {
            execute_slot_resolve(extraction_args(&call.arguments))
        }
        ToolName::Known(ToolId::HistoryRetrieve) => match history_n_arg(&call.arguments) {
            Some(n) => execute_history_retrieve(n, &ctx.dialogue_log),
            None => Err(crate::tools::ToolError::InvalidArgument(
                "history_retrieve requires an integer argument 'n'".into(),
            )),
        },
        ToolName::Unknown(ref name) => Err(crate::tools::ToolError::InvalidArgument(format!(
            "undefined tool '{name}'"
        ))),
    }
}

/// Ablated variant: exactly two backend calls per turn, classification then
/// resolution, with no feedback loop. Extractions that fail validation are
/// dropped individually; nothing is ever fed back.
fn run_turn_noloop(
    ctx: &TurnContext,
    schema: &Schema,
    backend: &dyn CompletionBackend,
    config: &EngineConfig,
) -> TurnOutcome {
    let mut state = new_loop_state(ctx, schema);

    // call 1: intent classification
    let mut intent: Option<String> = None;
    match next_step(&mut state, backend, config) {
        Err(error) => {
            let note = format!("backend error: {error}");
            state.trace.push_failure(&note, &note, 0);
            return state.degraded(&schema.fallback_intent_id);
        }
        Ok(result) => {
            let tokens = result.output_tokens;
            match parse_agent_step(&result) {
                Err(failure) => {
                    state
                        .transcript
                        .push(ChatMessage::assistant(render_assistant_echo(&result, None)));
                    // dropped, not fed back
                    state.trace.push_failure(&failure.0, "", tokens);
                }
                Ok(parsed) => {
                    state
                        .transcript
                        .push(ChatMessage::assistant(render_assistant_echo(
                            &result,
                            Some(&parsed),
                        )));
                    let call = ToolCall {
                        tool: parsed.tool.clone(),
                        arguments: parsed.arguments.clone(),
                        step_index: 0,
                    };
                    let outcome = validate(&call, &state.trace, schema);
                    if outcome.passed() && call.tool == ToolName::Known(ToolId::IntentClassify) {
                        match execute_intent_classify(
                            intent_arg(&call.arguments).unwrap_or_default(),
                            schema,
                        ) {
                            Ok(ToolResult::IntentAccepted {
                                intent_id,
                                slot_defs_rendered,
                            }) => {
                                intent = Some(intent_id.clone());
                                let observation = slot_defs_rendered.clone();
                                state.trace.push_validated(
                                    &parsed.thought,
                                    call,
                                    ValidationOutcome::Pass,
                                    ToolResult::IntentAccepted {
                                        intent_id,
                                        slot_defs_rendered,
                                    },
                                    &observation,
                                    tokens,
                                );
                                state.observe(&observation);
                            }
                            Ok(ToolResult::ShortCircuit { intent_id }) => {
                                state.trace.push_validated(
                                    &parsed.thought,
                                    call,
                                    ValidationOutcome::Pass,
                                    ToolResult::ShortCircuit {
                                        intent_id: intent_id.clone(),
                                    },
                                    "(short-circuit)",
                                    tokens,
                                );
                                intent = Some(intent_id);
                            }
                            _ => {}
                        }
                    } else {
                        // recorded but dropped; no feedback in this mode
                        state
                            .trace
                            .push_rejected(&parsed.thought, call, outcome, "", tokens);
                    }
                }
            }
        }
    }

    // call 2: slot resolution, issued unconditionally
    match next_step(&mut state, backend, config) {
        Err(error) => {
            let note = format!("backend error: {error}");
            state.trace.push_failure(&note, &note, 0);
            return state.degraded(&schema.fallback_intent_id);
        }
        Ok(result) => {
            let tokens = result.output_tokens;
            match parse_agent_step(&result) {
                Err(failure) => {
                    state.trace.push_failure(&failure.0, "", tokens);
                }
                Ok(parsed) => {
                    let call = ToolCall {
                        tool: parsed.tool.clone(),
                        arguments: parsed.arguments.clone(),
                        step_index: 1,
                    };
                    if state.trace.short_circuited() {
                        // the second call exists by protocol, not by model
                        // choice; after a short-circuit it is discarded
                        // without charging a violation
                        state
                            .trace
                            .push_unvalidated(&parsed.thought, call, None, "", tokens);
                    } else if call.tool == ToolName::Known(ToolId::SlotResolve)
                        && state.trace.active_intent().is_some()
                    {
                        let active_intent = state
                            .trace
                            .active_intent()
                            .expect("checked above")
                            .to_string();
                        let extractions = extraction_args(&call.arguments);
                        let (kept, all_violations) =
                            filter_extractions(&extractions, &active_intent, schema);
                        let outcome = if all_violations.is_empty() {
                            ValidationOutcome::Pass
                        } else {
                            ValidationOutcome::Fail(all_violations)
                        };
                        state.trace.push_validated(
                            &parsed.thought,
                            call,
                            outcome,
                            ToolResult::SlotCandidates(kept.clone()),
                            "(delta committed)",
                            tokens,
                        );
                        return state.commit(&kept, active_intent);
                    } else {
                        // anything else is recorded and dropped
                        let outcome = validate(&call, &state.trace, schema);
                        state
                            .trace
                            .push_rejected(&parsed.thought, call, outcome, "", tokens);
                    }
                }
            }
        }
    }

    let intent = intent.unwrap_or_else(|| schema.fallback_intent_id.clone());
    let mut outcome = state.short_circuit(intent);
    outcome.new_state = ctx.prev_state.clone();
    outcome.new_state.turn_index = ctx.dialogue_log.len() + 1;
    outcome
}

/// Per-extraction screening used by the no-loop mode: returns the extractions
/// that pass every check plus all violations found.
fn filter_extractions(
    extractions: &[SlotExtraction],
    intent_id: &str,
    schema: &Schema,
) -> (Vec<SlotExtraction>, Vec<Violation>) {
    use crate::validator::{check_coreference, check_schema_conformance};
    let mut kept = Vec::new();
    let mut violations = Vec::new();
    for extraction in extractions {
        let single = std::slice::from_ref(extraction);
        let mut found = check_schema_conformance(single, intent_id, schema);
        found.extend(check_coreference(single, schema));
        if found.is_empty() {
            kept.push(extraction.clone());
        } else {
            violations.extend(found);
        }
    }
    (kept, violations)
}

// ---------------------------------------------------------------------------
// Dialogue threading
// ---------------------------------------------------------------------------

/// One evaluated turn of a dialogue run.
#[derive(Debug, Clone)]
pub struct TurnRecord {
    pub turn: usize,
    pub outcome: TurnOutcome,
}

/// Per-dialogue engine output; the predicted state after turn `t` is
/// `turns[t-1].outcome.new_state`.
#[derive(Debug, Clone)]
pub struct DialogueResult {
    pub dialogue_id: String,
    pub turns: Vec<TurnRecord>,
}

/// Runs a whole dialogue end-to-end, threading the predicted (never gold)
/// state forward across turns. Degraded turns are recorded and the dialogue
/// continues. SGD-style inputs may repeat a turn index once per frame; the
/// engine runs each turn once.
pub fn run_dialogue(
    dialogue: &[GoldTurn],
    schema: &Schema,
    backend: &dyn CompletionBackend,
    config: &EngineConfig,
) -> DialogueResult {
    let dialogue_id = dialogue
        .first()
        .map(|t| t.dialogue_id.clone())
        .unwrap_or_default();
    let mut results = Vec::new();
    let mut prev_state = BeliefState::new();
    let mut prev_intents: Vec<String> = Vec::new();
    let mut prev_system_action = String::new();
    let mut dialogue_log: Vec<LoggedTurn> = Vec::new();
    let mut seen_turns = std::collections::BTreeSet::new();

    for gold in dialogue {
        if !seen_turns.insert(gold.turn) {
            continue;
        }
        let ctx = TurnContext {
            user_utterance: gold.user_utterance.clone(),
            prev_system_action: prev_system_action.clone(),
            prev_state: prev_state.clone(),
            prev_intents: prev_intents.clone(),
            dialogue_log: dialogue_log.clone(),
        };
        let outcome = run_turn(&ctx, schema, backend, config);
        prev_state = outcome.new_state.clone();
        if !outcome.delta.is_empty() && !prev_intents.contains(&outcome.intent) {
            prev_intents.push(outcome.intent.clone());
        }
        prev_system_action = gold.system_utterance.clone();
        dialogue_log.push(LoggedTurn {
            user: gold.user_utterance.clone(),
            system: gold.system_utterance.clone(),
        });
        results.push(TurnRecord {
            turn: gold.turn,
            outcome,
        });
    }
    DialogueResult {
        dialogue_id,
        turns: results,
    }
}
