//! Zero-shot dialogue state tracking through validator-gated tool calls
//! inside a bounded reasoning loop, plus the evaluation harness that scores
//! it on MultiWOZ- and SGD-style corpora.
//!
//! The crate is organized around the turn lifecycle:
//!
//! - [`schema`]: the domain ontology (intents, typed slots) and its
//!   derivations from MultiWOZ 2.2 and SGD service definitions.
//! - [`backend`]: pluggable completion backends — a chat-completions HTTP
//!   adapter and deterministic scripted replays.
//! - [`engine`]: the bounded loop orchestrating classification, resolution,
//!   validation feedback, and deferred state commits.
//! - [`validator`]: the deterministic gatekeeper screening every proposed
//!   call before it can touch state.
//! - [`state`]: the persistent multi-domain belief table with upsert-only
//!   updates.
//! - [`tools`]: the tool library executors.
//! - [`data`], [`metrics`], [`report`], [`trace`]: corpus ingestion, scoring,
//!   and the JSONL audit trail.

pub mod backend;
pub mod data;
pub mod engine;
pub mod metrics;
pub mod report;
pub mod schema;
pub mod state;
pub mod tools;
pub mod trace;
pub mod validator;

pub use backend::{
    estimate_tokens, request_fingerprint, BackendError, ChatMessage, ChatRole, CompletionBackend,
    CompletionRequest, CompletionResult, FixtureLine, HttpBackend, HttpBackendConfig,
    NativeToolCall, RecordingBackend, ScriptedBackend, ScriptedFixture, TurnScriptBackend,
};
pub use data::{load_multiwoz, load_sgd, sgd_services, DataError, Dialogue, GoldTurn};
pub use engine::{
    build_system_prompt, build_turn_message, parse_agent_step, run_dialogue, run_turn, AgentTrace,
    DialogueResult, EngineConfig, EngineMode, ParsedStep, TurnContext, TurnOutcome, TurnRecord,
};
pub use metrics::{
    fuzzy_match, joint_goal_accuracy, percentile, validator_activation_report, ActivationReport,
    JgaResult, JgaScope, MetricsError, PredictedTurn, SummaryStats, DEFAULT_FUZZY_THRESHOLD,
};
pub use report::{build_report, render_text_report, report_to_json, EvalReport};
pub use schema::{
    derive_multiwoz_schema, derive_sgd_schema, load_schema, parse_type_annotations,
    slots_for_intent, IntentDef, Schema, SchemaError, SlotDef, SlotRole, SlotType,
    FALLBACK_INTENT_ID,
};
pub use state::{
    apply_update, gold_delta, project_domain, BeliefState, SlotValue, StateError, StateUpdate,
    DONTCARE, NULL_SENTINEL,
};
pub use tools::{
    execute_history_retrieve, execute_intent_classify, execute_slot_resolve, LoggedTurn,
    SlotExtraction, ToolCall, ToolError, ToolId, ToolName, ToolResult,
};
pub use trace::{TraceError, TraceFile, TraceRecord, TraceValue};
pub use validator::{
    check_coreference, check_schema_conformance, render_feedback, validate, ValidationOutcome,
    Violation, ViolationCategory, ViolationCode,
};
