//! The tool library: intent classification, slot resolution, and history
//! retrieval executors.
//!
//! Executors are stateless functions over immutable inputs and never touch
//! the belief state; the engine converts a validated slot-resolution result
//! into a state update itself.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use tracing::warn;

use crate::schema::{slots_for_intent, Schema, SlotDef, SlotType};

/// Wire names accepted from the model.
pub const TOOL_INTENT_CLASSIFY: &str = "intent_classify";
pub const TOOL_SLOT_RESOLVE: &str = "slot_resolve";
pub const TOOL_HISTORY_RETRIEVE: &str = "history_retrieve";

#[derive(Debug, Error)]
pub enum ToolError {
    #[error("unknown intent '{0}'")]
    UnknownIntent(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// The closed set of tools the agent may call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToolId {
    IntentClassify,
    SlotResolve,
    HistoryRetrieve,
}

impl ToolId {
    pub fn wire_name(&self) -> &'static str {
        match self {
            ToolId::IntentClassify => TOOL_INTENT_CLASSIFY,
            ToolId::SlotResolve => TOOL_SLOT_RESOLVE,
            ToolId::HistoryRetrieve => TOOL_HISTORY_RETRIEVE,
        }
    }
}

/// A requested tool, which may name something outside the library; the
/// validator turns unknown names into action-compliance violations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ToolName {
    Known(ToolId),
    Unknown(String),
}

impl ToolName {
    pub fn parse(name: &str) -> ToolName {
        match name {
            TOOL_INTENT_CLASSIFY => ToolName::Known(ToolId::IntentClassify),
            TOOL_SLOT_RESOLVE => ToolName::Known(ToolId::SlotResolve),
            TOOL_HISTORY_RETRIEVE => ToolName::Known(ToolId::HistoryRetrieve),
            other => ToolName::Unknown(other.to_string()),
        }
    }

    pub fn wire_name(&self) -> &str {
        match self {
            ToolName::Known(id) => id.wire_name(),
            ToolName::Unknown(name) => name,
        }
    }
}

/// A proposed agent action at one reasoning step.
#[derive(Debug, Clone, PartialEq)]
pub struct ToolCall {
    pub tool: ToolName,
    /// Raw argument object as produced by the model; executors and the
    /// validator parse the fields they need.
    pub arguments: Value,
    pub step_index: usize,
}

/// One extracted entity: surface form plus canonical normalization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotExtraction {
    pub slot_id: String,
    pub raw: String,
    pub norm: String,
}

/// Result of executing a validated tool call.
#[derive(Debug, Clone, PartialEq)]
pub enum ToolResult {
    IntentAccepted {
        intent_id: String,
        slot_defs_rendered: String,
    },
    SlotCandidates(Vec<SlotExtraction>),
    History {
        turns_rendered: String,
    },
    /// Non-transactional intent: the turn terminates with an empty delta and
    /// slot resolution is skipped entirely.
    ShortCircuit {
        intent_id: String,
    },
}

/// One completed user/system exchange, stored verbatim for history retrieval.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoggedTurn {
    pub user: String,
    pub system: String,
}

// ---------------------------------------------------------------------------
// Argument parsing shared by the validator and the executors
// ---------------------------------------------------------------------------

/// The `intent` argument of an intent_classify call, if present and a string.
pub fn intent_arg(arguments: &Value) -> Option<&str> {
    arguments.get("intent").and_then(Value::as_str)
}

/// Lenient extraction of the `extractions` argument of a slot_resolve call.
///
/// Entries missing `raw` fall back to the norm (the invariant requires a
/// non-empty surface form); entries missing `norm` fall back to the raw.
/// Missing or mistyped fields become empty strings for the validator to
/// flag rather than hard parse errors.
pub fn extraction_args(arguments: &Value) -> Vec<SlotExtraction> {
    let Some(items) = arguments.get("extractions").and_then(Value::as_array) else {
        return Vec::new();
    };
    items
        .iter()
        .map(|item| {
            let field = |key: &str| {
                item.get(key)
                    .and_then(Value::as_str)
                    .unwrap_or_default()
                    .trim()
                    .to_string()
            };
            let slot_id = field("slot");
            let mut raw = field("raw");
            let mut norm = field("norm");
            if norm.is_empty() {
                norm = raw.clone();
            }
            if raw.is_empty() {
                raw = norm.clone();
            }
            SlotExtraction { slot_id, raw, norm }
        })
        .collect()
}

/// The `n` argument of a history_retrieve call; `None` when absent or not an
/// integer.
pub fn history_n_arg(arguments: &Value) -> Option<i64> {
    arguments.get("n").and_then(Value::as_i64)
}

// ---------------------------------------------------------------------------
// Executors
// ---------------------------------------------------------------------------

/// Renders an intent's slot definitions in the fixed plain-text template
/// injected as the intent_classify observation. The template is normative:
/// one `- id | description | type/constraints | role` line per slot.
pub fn render_slot_defs(slots: &[SlotDef]) -> String {
    if slots.is_empty() {
        return "(no slots defined)".to_string();
    }
    slots
        .iter()
        .map(|slot| {
            format!(
                "- {} | {} | {} | {}",
                slot.id,
                slot.description,
                render_slot_type(&slot.slot_type),
                slot.role.tag()
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn render_slot_type(slot_type: &SlotType) -> String {
    match slot_type {
        SlotType::Categorical(values) => format!("categorical {{{}}}", values.join(", ")),
        SlotType::Time => "time (HH:MM)".to_string(),
        SlotType::Date => "date (YYYY-MM-DD)".to_string(),
        SlotType::Number => "number (integer)".to_string(),
        SlotType::Freeform => "freeform".to_string(),
    }
}

/// Executes a validated intent_classify call: transactional intents return
/// their rendered slot definitions for lazy injection, non-transactional
/// intents short-circuit the turn.
pub fn execute_intent_classify(intent_id: &str, schema: &Schema) -> Result<ToolResult, ToolError> {
    let intent = schema
        .intent(intent_id)
        .ok_or_else(|| ToolError::UnknownIntent(intent_id.to_string()))?;
    if !intent.transactional {
        return Ok(ToolResult::ShortCircuit {
            intent_id: intent.id.clone(),
        });
    }
    let slots = slots_for_intent(schema, intent_id)
        .map_err(|_| ToolError::UnknownIntent(intent_id.to_string()))?;
    Ok(ToolResult::IntentAccepted {
        intent_id: intent.id.clone(),
        slot_defs_rendered: render_slot_defs(slots),
    })
}

/// Executes a validated slot_resolve call. Duplicate proposals for the same
/// slot resolve last-wins after a logged warning; an empty extraction list is
/// a legal no-entity turn.
pub fn execute_slot_resolve(extractions: Vec<SlotExtraction>) -> Result<ToolResult, ToolError> {
    let mut deduped: Vec<SlotExtraction> = Vec::with_capacity(extractions.len());
    for extraction in extractions {
        if let Some(existing) = deduped.iter_mut().find(|e| e.slot_id == extraction.slot_id) {
            warn!(
                slot = %extraction.slot_id,
                "duplicate slot proposal in one slot_resolve call; keeping the last"
            );
            *existing = extraction;
        } else {
            deduped.push(extraction);
        }
    }
    Ok(ToolResult::SlotCandidates(deduped))
}

/// Executes a validated history_retrieve call: the last `min(n, available)`
/// user/system turn pairs, verbatim, oldest first.
pub fn execute_history_retrieve(n: i64, log: &[LoggedTurn]) -> Result<ToolResult, ToolError> {
    if n < 1 {
        return Err(ToolError::InvalidArgument(format!(
            "history size must be a positive integer, got {n}"
        )));
    }
    let take = (n as usize).min(log.len());
    let rendered = if take == 0 {
        "(no prior turns)".to_string()
    } else {
        log[log.len() - take..]
            .iter()
            .map(|turn| format!("user: {}\nsystem: {}", turn.user, turn.system))
            .collect::<Vec<_>>()
            .join("\n")
    };
    Ok(ToolResult::History {
        turns_rendered: rendered,
    })
}

/// Native tool-call signature advertised to backends that support structured
/// calling.
#[derive(Debug, Clone, Serialize)]
pub struct ToolSignature {
    pub name: String,
    pub description: String,
    pub parameters: Value,
}

/// Signatures for the full tool library, in protocol order.
pub fn native_signatures() -> Vec<ToolSignature> {
    vec![
        ToolSignature {
            name: TOOL_INTENT_CLASSIFY.to_string(),
            description: "Select the active intent for the current turn; returns the intent's slot definitions.".to_string(),
            parameters: serde_json::json!({
                "type": "object",
                "properties": {
                    "intent": {"type": "string", "description": "intent id from the intent list"}
                },
                "required": ["intent"]
            }),
        },
        ToolSignature {
            name: TOOL_SLOT_RESOLVE.to_string(),
            description: "Submit the slot values the user gave or changed this turn; an empty list means no slot changes.".to_string(),
            parameters: serde_json::json!({
                "type": "object",
                "properties": {
                    "extractions": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "properties": {
                                "slot": {"type": "string", "description": "slot id"},
                                "raw": {"type": "string", "description": "surface form as uttered"},
                                "norm": {"type": "string", "description": "canonical normalized value"}
                            },
                            "required": ["slot", "norm"]
                        }
                    }
                },
                "required": ["extractions"]
            }),
        },
        ToolSignature {
            name: TOOL_HISTORY_RETRIEVE.to_string(),
            description: "Retrieve the last n turns of the conversation for coreference resolution.".to_string(),
            parameters: serde_json::json!({
                "type": "object",
                "properties": {
                    "n": {"type": "integer", "description": "number of past turns", "minimum": 1}
                },
                "required": ["n"]
            }),
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::load_schema;

    fn schema() -> Schema {
        load_schema(
            r#"{
                "name": "mini",
                "fallback_intent": "general",
                "intents": [
                    {"id": "hotel", "description": "hotel search and booking", "transactional": true,
                     "slots": [
                        {"id": "hotel-area", "description": "area of town", "type": "categorical",
                         "role": "filter", "values": ["centre", "east", "north", "south", "west"]},
                        {"id": "hotel-name", "description": "name of the hotel", "type": "freeform",
                         "role": "filter"}
                     ]},
                    {"id": "general", "description": "fallback", "transactional": false}
                ],
                "generic_terms": {"hotel-name": ["hotel", "hotels"]}
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn intent_classify_returns_rendered_slot_defs() {
        let result = execute_intent_classify("hotel", &schema()).unwrap();
        match result {
            ToolResult::IntentAccepted {
                intent_id,
                slot_defs_rendered,
            } => {
                assert_eq!(intent_id, "hotel");
                assert!(slot_defs_rendered
                    .contains("- hotel-area | area of town | categorical {centre, east, north, south, west} | filter"));
                assert!(slot_defs_rendered.contains("- hotel-name"));
            }
            other => panic!("expected IntentAccepted, got {other:?}"),
        }
    }

    #[test]
    fn fallback_intent_short_circuits() {
        let result = execute_intent_classify("general", &schema()).unwrap();
        assert_eq!(
            result,
            ToolResult::ShortCircuit {
                intent_id: "general".to_string()
            }
        );
    }

    #[test]
    fn unknown_intent_is_an_internal_fault() {
        assert!(matches!(
            execute_intent_classify("bookflight", &schema()),
            Err(ToolError::UnknownIntent(_))
        ));
    }

    #[test]
    fn slot_resolve_passes_candidates_through() {
        let result = execute_slot_resolve(vec![SlotExtraction {
            slot_id: "train-leaveat".to_string(),
            raw: "quarter past nine".to_string(),
            norm: "09:15".to_string(),
        }])
        .unwrap();
        match result {
            ToolResult::SlotCandidates(candidates) => {
                assert_eq!(candidates.len(), 1);
                assert_eq!(candidates[0].norm, "09:15");
            }
            other => panic!("expected SlotCandidates, got {other:?}"),
        }
    }

    #[test]
    fn slot_resolve_empty_list_is_legal() {
        let result = execute_slot_resolve(Vec::new()).unwrap();
        assert_eq!(result, ToolResult::SlotCandidates(Vec::new()));
    }

    #[test]
    fn slot_resolve_duplicates_resolve_last_wins() {
        let result = execute_slot_resolve(vec![
            SlotExtraction {
                slot_id: "hotel-area".to_string(),
                raw: "north".to_string(),
                norm: "north".to_string(),
            },
            SlotExtraction {
                slot_id: "hotel-area".to_string(),
                raw: "south".to_string(),
                norm: "south".to_string(),
            },
        ])
        .unwrap();
        assert_eq!(
            result,
            ToolResult::SlotCandidates(vec![SlotExtraction {
                slot_id: "hotel-area".to_string(),
                raw: "south".to_string(),
                norm: "south".to_string(),
            }])
        );
    }

    fn log() -> Vec<LoggedTurn> {
        (1..=3)
            .map(|i| LoggedTurn {
                user: format!("user turn {i}"),
                system: format!("system turn {i}"),
            })
            .collect()
    }

    #[test]
    fn history_windows_the_last_n_pairs_oldest_first() {
        let result = execute_history_retrieve(2, &log()).unwrap();
        match result {
            ToolResult::History { turns_rendered } => {
                assert_eq!(
                    turns_rendered,
                    "user: user turn 2\nsystem: system turn 2\nuser: user turn 3\nsystem: system turn 3"
                );
            }
            other => panic!("expected History, got {other:?}"),
        }
    }

    #[test]
    fn history_clamps_to_available_turns() {
        let result = execute_history_retrieve(100, &log()).unwrap();
        match result {
            ToolResult::History { turns_rendered } => {
                // verbatim: every stored utterance appears unmodified
                for turn in log() {
                    assert!(turns_rendered.contains(&turn.user));
                    assert!(turns_rendered.contains(&turn.system));
                }
            }
            other => panic!("expected History, got {other:?}"),
        }
    }

    #[test]
    fn history_rejects_non_positive_n() {
        assert!(matches!(
            execute_history_retrieve(0, &log()),
            Err(ToolError::InvalidArgument(_))
        ));
    }

    #[test]
    fn extraction_args_fill_missing_fields() {
        let args = serde_json::json!({
            "extractions": [
                {"slot": "hotel-area", "norm": "north"},
                {"slot": "hotel-name", "raw": "the gandhi"}
            ]
        });
        let parsed = extraction_args(&args);
        assert_eq!(parsed[0].raw, "north");
        assert_eq!(parsed[1].norm, "the gandhi");
    }
}
