//! Deterministic validation of proposed tool calls.
//!
//! Every call the agent emits is screened here before any execution or state
//! effect. Checks are purely symbolic (no generative component is ever
//! consulted), run in a fixed order — action compliance, schema conformance,
//! coreference consistency — and every violation found is collected into a
//! single outcome so one correction iteration carries maximal information.

use std::sync::LazyLock;

use regex::Regex;
use thiserror::Error;

use crate::engine::AgentTrace;
use crate::schema::{slots_for_intent, Schema, SlotType};
use crate::state::{DONTCARE, NULL_SENTINEL};
use crate::tools::{
    extraction_args, intent_arg, SlotExtraction, ToolCall, ToolId, ToolName, TOOL_HISTORY_RETRIEVE,
    TOOL_INTENT_CLASSIFY, TOOL_SLOT_RESOLVE,
};

static TIME_FORMAT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^([01][0-9]|2[0-3]):[0-5][0-9]$").unwrap());
static DATE_FORMAT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\d{4}-\d{2}-\d{2}$").unwrap());
static NUMBER_FORMAT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\d+$").unwrap());

#[derive(Debug, Error)]
pub enum ValidatorError {
    #[error("render_feedback called on a passing outcome")]
    FeedbackOnPass,
}

/// The three reporting categories of the activation analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ViolationCategory {
    ActionCompliance,
    SchemaConformance,
    CoreferenceConsistency,
}

impl ViolationCategory {
    pub fn tag(&self) -> &'static str {
        match self {
            ViolationCategory::ActionCompliance => "action_compliance",
            ViolationCategory::SchemaConformance => "schema_conformance",
            ViolationCategory::CoreferenceConsistency => "coreference_consistency",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "action_compliance" => Some(ViolationCategory::ActionCompliance),
            "schema_conformance" => Some(ViolationCategory::SchemaConformance),
            "coreference_consistency" => Some(ViolationCategory::CoreferenceConsistency),
            _ => None,
        }
    }
}

/// Specific violation kind; each code belongs to exactly one category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ViolationCode {
    UndefinedTool,
    MissingPrerequisiteIc,
    DuplicateCall,
    UnknownIntent,
    UnknownSlot,
    EnumViolation,
    FormatViolation,
    GenericReference,
}

impl ViolationCode {
    pub fn category(&self) -> ViolationCategory {
        match self {
            ViolationCode::UndefinedTool
            | ViolationCode::MissingPrerequisiteIc
            | ViolationCode::DuplicateCall => ViolationCategory::ActionCompliance,
            ViolationCode::UnknownIntent
            | ViolationCode::UnknownSlot
            | ViolationCode::EnumViolation
            | ViolationCode::FormatViolation => ViolationCategory::SchemaConformance,
            ViolationCode::GenericReference => ViolationCategory::CoreferenceConsistency,
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            ViolationCode::UndefinedTool => "undefined_tool",
            ViolationCode::MissingPrerequisiteIc => "missing_prerequisite_ic",
            ViolationCode::DuplicateCall => "duplicate_call",
            ViolationCode::UnknownIntent => "unknown_intent",
            ViolationCode::UnknownSlot => "unknown_slot",
            ViolationCode::EnumViolation => "enum_violation",
            ViolationCode::FormatViolation => "format_violation",
            ViolationCode::GenericReference => "generic_reference",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "undefined_tool" => Some(ViolationCode::UndefinedTool),
            "missing_prerequisite_ic" => Some(ViolationCode::MissingPrerequisiteIc),
            "duplicate_call" => Some(ViolationCode::DuplicateCall),
            "unknown_intent" => Some(ViolationCode::UnknownIntent),
            "unknown_slot" => Some(ViolationCode::UnknownSlot),
            "enum_violation" => Some(ViolationCode::EnumViolation),
            "format_violation" => Some(ViolationCode::FormatViolation),
            "generic_reference" => Some(ViolationCode::GenericReference),

            _ => None,
        }
    }
}

/// One structured violation, carrying the feedback line shown to the agent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub category: ViolationCategory,
    pub code: ViolationCode,
    pub subject: String,
    pub message: String,
}

impl Violation {
    pub fn new(
        code: ViolationCode,
        subject: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Violation {
            category: code.category(),
            code,
            subject: subject.into(),
            message: message.into(),
        }
    }
}

/// Verdict for one proposed call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ValidationOutcome {
    Pass,
    Fail(Vec<Violation>),
}

impl ValidationOutcome {
    fn from_violations(violations: Vec<Violation>) -> Self {
        if violations.is_empty() {
            ValidationOutcome::Pass
        } else {
            ValidationOutcome::Fail(violations)
        }
    }

    pub fn passed(&self) -> bool {
        matches!(self, ValidationOutcome::Pass)
    }

    pub fn violations(&self) -> &[Violation] {
        match self {
            ValidationOutcome::Pass => &[],
            ValidationOutcome::Fail(violations) => violations,
        }
    }
}

fn intent_list(schema: &Schema) -> String {
    schema.intent_ids().join(", ")
}

/// Screens a proposed call against the turn so far. Purely deterministic:
/// identical inputs always yield identical outcomes, and every failure mode
/// is a violation rather than an error.
pub fn validate(call: &ToolCall, turn_trace: &AgentTrace, schema: &Schema) -> ValidationOutcome {
    let mut violations = Vec::new();

    // action compliance
    if turn_trace.short_circuited() {
        violations.push(Violation::new(
            ViolationCode::MissingPrerequisiteIc,
            call.tool.wire_name().to_string(),
            "turn already terminated by a non-transactional intent: no further calls are allowed",
        ));
    }
    let tool_id = match &call.tool {
        ToolName::Known(id) => Some(*id),
        ToolName::Unknown(name) => {
            violations.push(Violation::new(
                ViolationCode::UndefinedTool,
                name.clone(),
                format!(
                    "undefined tool '{name}': available tools are {TOOL_INTENT_CLASSIFY}, {TOOL_SLOT_RESOLVE}, {TOOL_HISTORY_RETRIEVE}"
                ),
            ));
            None
        }
    };
    if let Some(id) = tool_id {
        let duplicate = turn_trace
            .prior_calls()
            .any(|prior| prior.tool == call.tool && prior.arguments == call.arguments);
        if duplicate {
            violations.push(Violation::new(
                ViolationCode::DuplicateCall,
                id.wire_name().to_string(),
                format!(
                    "duplicate call to {} with identical arguments: do not repeat a call within a turn",
                    id.wire_name()
                ),
            ));
        }
    }

    match tool_id {
        Some(ToolId::IntentClassify) => match intent_arg(&call.arguments) {
            Some(intent) if schema.has_intent(intent) => {}
            Some(intent) => violations.push(Violation::new(
                ViolationCode::UnknownIntent,
                intent.to_string(),
                format!(
                    "unknown intent '{intent}': valid intents are {}",
                    intent_list(schema)
                ),
            )),
            None => violations.push(Violation::new(
                ViolationCode::UnknownIntent,
                "(missing)",
                format!(
                    "intent_classify requires an 'intent' argument naming one of: {}",
                    intent_list(schema)
                ),
            )),
        },
        Some(ToolId::SlotResolve) => match turn_trace.active_intent() {
            None => violations.push(Violation::new(
                ViolationCode::MissingPrerequisiteIc,
                TOOL_SLOT_RESOLVE,
                "slot_resolve requires a prior successful intent_classify in this turn: call intent_classify first",
            )),
            Some(active_intent) => {
                let extractions = extraction_args(&call.arguments);
                violations.extend(check_schema_conformance(&extractions, active_intent, schema));
                violations.extend(check_coreference(&extractions, schema));
            }
        },
        // history_retrieve argument errors surface from the executor, not here
        Some(ToolId::HistoryRetrieve) | None => {}
    }

    ValidationOutcome::from_violations(violations)
}

/// Schema-conformance checks for slot extractions: slot names must belong to
/// the active intent and normalized values must satisfy the slot's type
/// constraint. Null-sentinel values (removal requests) and the `dontcare`
/// marker are exempt from value constraints but the slot must still exist.
pub fn check_schema_conformance(
    extractions: &[SlotExtraction],
    intent_id: &str,
    schema: &Schema,
) -> Vec<Violation> {
    let slots = match slots_for_intent(schema, intent_id) {
        Ok(slots) => slots,
        Err(_) => {
            return vec![Violation::new(
                ViolationCode::UnknownIntent,
                intent_id.to_string(),
                format!(
                    "unknown intent '{intent_id}': valid intents are {}",
                    intent_list(schema)
                ),
            )]
        }
    };
    let slot_ids = || {
        slots
            .iter()
            .map(|s| s.id.as_str())
            .collect::<Vec<_>>()
            .join(", ")
    };

    let mut violations = Vec::new();
    for extraction in extractions {
        let Some(slot) = slots.iter().find(|s| s.id == extraction.slot_id) else {
            let subject = if extraction.slot_id.is_empty() {
                "(missing)".to_string()
            } else {
                extraction.slot_id.clone()
            };
            violations.push(Violation::new(
                ViolationCode::UnknownSlot,
                subject.clone(),
                format!(
                    "unknown slot '{subject}' for intent '{intent_id}': valid slots are {}",
                    slot_ids()
                ),
            ));
            continue;
        };
        if extraction.norm == NULL_SENTINEL || extraction.norm.eq_ignore_ascii_case(DONTCARE) {
            continue;
        }
        if extraction.norm.is_empty() {
            violations.push(Violation::new(
                ViolationCode::FormatViolation,
                slot.id.clone(),
                format!(
                    "invalid format for slot {}: empty normalized value",
                    slot.id
                ),
            ));
            continue;
        }
        match &slot.slot_type {
            SlotType::Categorical(values) => {
                if !slot.slot_type.enum_contains(&extraction.norm) {
                    violations.push(Violation::new(
                        ViolationCode::EnumViolation,
                        slot.id.clone(),
                        format!(
                            "invalid value '{}' for slot {}: must be one of {{{}}}",
                            extraction.norm,
                            slot.id,
                            values.join(", ")
                        ),
                    ));
                }
            }
            SlotType::Time => {
                if !TIME_FORMAT.is_match(&extraction.norm) {
                    violations.push(Violation::new(
                        ViolationCode::FormatViolation,
                        slot.id.clone(),
                        format!("invalid format for slot {}: expected HH:MM", slot.id),
                    ));
                }
            }
            SlotType::Date => {
                if !DATE_FORMAT.is_match(&extraction.norm) {
                    violations.push(Violation::new(
                        ViolationCode::FormatViolation,
                        slot.id.clone(),
                        format!("invalid format for slot {}: expected YYYY-MM-DD", slot.id),
                    ));
                }
            }
            SlotType::Number => {
                if !NUMBER_FORMAT.is_match(&extraction.norm) {
                    violations.push(Violation::new(
                        ViolationCode::FormatViolation,
                        slot.id.clone(),
                        format!("invalid format for slot {}: expected an integer", slot.id),
                    ));
                }
            }
            SlotType::Freeform => {}
        }
    }
    violations
}

/// Coreference-consistency check: a normalized value that is one of the
/// slot's configured generic terms ("restaurant", "hotel", ...) indicates an
/// unresolved entity; the feedback steers the agent to history retrieval.
pub fn check_coreference(extractions: &[SlotExtraction], schema: &Schema) -> Vec<Violation> {
    let mut violations = Vec::new();
    for extraction in extractions {
        if extraction.norm == NULL_SENTINEL {
            continue;
        }
        let Some(terms) = schema.generic_terms.get(&extraction.slot_id) else {
            continue;
        };
        let needle = extraction.norm.trim().to_lowercase();
        if terms.iter().any(|t| t.trim().to_lowercase() == needle) {
            violations.push(Violation::new(
                ViolationCode::GenericReference,
                extraction.slot_id.clone(),
                format!(
                    "generic reference '{}' for slot {}: call {TOOL_HISTORY_RETRIEVE} to resolve the specific entity name",
                    extraction.norm, extraction.slot_id
                ),
            ));
        }
    }
    violations
}

/// Renders a failing outcome as the structured feedback injected into the
/// agent's context: one line per violation, byte-stable across runs.
pub fn render_feedback(outcome: &ValidationOutcome) -> Result<String, ValidatorError> {
    match outcome {
        ValidationOutcome::Pass => Err(ValidatorError::FeedbackOnPass),
        ValidationOutcome::Fail(violations) => Ok(violations
            .iter()
            .map(|v| v.message.as_str())
            .collect::<Vec<_>>()
            .join("\n")),
    }
}
