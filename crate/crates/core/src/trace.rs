//! JSONL execution traces.
//!
//! One record per turn. The record is the normative audit surface: every
//! reasoning step, every violation, the committed delta, and the resulting
//! state. Files start with a manifest header line carrying the resolved run
//! configuration so reports can be rebuilt from the trace file alone.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::data::GoldTurn;
use crate::engine::{EngineMode, TurnOutcome};
use crate::state::{BeliefState, StateUpdate};
use crate::validator::Violation;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Flat `{raw, norm}` rendering of one tracked value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceValue {
    pub raw: String,
    pub norm: String,
}

/// One violation as recorded in the trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceViolation {
    pub category: String,
    pub code: String,
    pub subject: String,
    pub message: String,
    pub step: usize,
}

/// One reasoning step of the turn, including rejected ones.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceStepRecord {
    pub thought: String,
    /// Requested tool name; absent for unparseable steps and backend errors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub args: Option<Value>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub validation: Vec<TraceViolation>,
    pub observation: String,
}

/// Gold annotation for one SGD frame.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceFrame {
    pub service: String,
    pub gold: BTreeMap<String, TraceValue>,
}

/// One turn of one dialogue.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRecord {
    pub dialogue_id: String,
    pub turn: usize,
    pub mode: String,
    pub llm_calls: u64,
    pub output_tokens: u64,
    pub degraded: bool,
    pub intent: String,
    pub delta: BTreeMap<String, TraceValue>,
    pub state: BTreeMap<String, TraceValue>,
    pub steps: Vec<TraceStepRecord>,
    /// Gold state for scoring; present when the run had gold annotations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<BTreeMap<String, TraceValue>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub active_domains: Vec<String>,
    /// Per-service gold frames (SGD-style evaluation units).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub frames: Vec<TraceFrame>,
}

pub fn state_to_map(state: &BeliefState) -> BTreeMap<String, TraceValue> {
    state
        .entries
        .iter()
        .map(|(slot, value)| {
            (
                slot.clone(),
                TraceValue {
                    raw: value.raw.clone(),
                    norm: value.norm.clone(),
                },
            )
        })
        .collect()
}

pub fn update_to_map(update: &StateUpdate) -> BTreeMap<String, TraceValue> {
    update
        .changes
        .iter()
        .map(|(slot, value)| {
            (
                slot.clone(),
                TraceValue {
                    raw: value.raw.clone(),
                    norm: value.norm.clone(),
                },
            )
        })
        .collect()
}

fn violation_record(violation: &Violation, step: usize) -> TraceViolation {
    TraceViolation {
        category: violation.category.tag().to_string(),
        code: violation.code.tag().to_string(),
        subject: violation.subject.clone(),
        message: violation.message.clone(),
        step,
    }
}

impl TraceRecord {
    pub fn from_turn(
        dialogue_id: &str,
        turn: usize,
        mode: EngineMode,
        outcome: &TurnOutcome,
    ) -> TraceRecord {
        let steps = outcome
            .trace
            .steps
            .iter()
            .enumerate()
            .map(|(index, step)| TraceStepRecord {
                thought: step.thought.clone(),
                tool: step.call.as_ref().map(|c| c.tool.wire_name().to_string()),
                args: step.call.as_ref().map(|c| c.arguments.clone()),
                validation: step
                    .outcome
                    .iter()
                    .flat_map(|o| o.violations().iter())
                    .map(|v| violation_record(v, index))
                    .collect(),
                observation: step.observation.clone(),
            })
            .collect();
        TraceRecord {
            dialogue_id: dialogue_id.to_string(),
            turn,
            mode: mode.tag().to_string(),
            llm_calls: outcome.llm_calls,
            output_tokens: outcome.output_tokens,
            degraded: outcome.degraded,
            intent: outcome.intent.clone(),
            delta: update_to_map(&outcome.delta),
            state: state_to_map(&outcome.new_state),
            steps,
            gold: None,
            active_domains: Vec::new(),
            frames: Vec::new(),
        }
    }

    /// Attaches the gold annotations of this turn's frames for scoring. The
    /// union of frame states becomes the turn-level gold; each frame with a
    /// service tag is kept as a separate evaluation unit.
    pub fn with_gold(mut self, frames: &[&GoldTurn]) -> TraceRecord {
        let mut union: BTreeMap<String, TraceValue> = BTreeMap::new();
        let mut domains: Vec<String> = Vec::new();
        for gold in frames {
            union.extend(state_to_map(&gold.gold_state));
            for domain in &gold.active_domains {
                if !domains.contains(domain) {
                    domains.push(domain.clone());
                }
            }
            if let Some(service) = &gold.service {
                self.frames.push(TraceFrame {
                    service: service.clone(),
                    gold: state_to_map(&gold.gold_state),
                });
            }
        }
        self.gold = Some(union);
        self.active_domains = domains;
        self
    }

    /// Norm-only view of the predicted state.
    pub fn state_norms(&self) -> BTreeMap<String, String> {
        self.state
            .iter()
            .map(|(k, v)| (k.clone(), v.norm.clone()))
            .collect()
    }

    /// All violations across steps, in step order.
    pub fn violations(&self) -> impl Iterator<Item = &TraceViolation> {
        self.steps.iter().flat_map(|s| s.validation.iter())
    }
}

/// A parsed trace file: optional manifest header plus turn records.
#[derive(Debug, Clone, Default)]
pub struct TraceFile {
    pub manifest: Option<Value>,
    pub records: Vec<TraceRecord>,
}

impl TraceFile {
    pub fn new(manifest: Value, records: Vec<TraceRecord>) -> Self {
        TraceFile {
            manifest: Some(manifest),
            records,
        }
    }

    /// Serializes as JSONL: manifest header first, one record per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        if let Some(manifest) = &self.manifest {
            let header = serde_json::json!({ "manifest": manifest });
            out.push_str(&header.to_string());
            out.push('\n');
        }
        for record in &self.records {
            out.push_str(&serde_json::to_string(record).expect("trace serialization"));
            out.push('\n');
        }
        out
    }

    /// Parses a JSONL trace stream. Manifest headers may appear anywhere
    /// (concatenated runs); the first one wins. Malformed lines report their
    /// line number.
    pub fn from_jsonl(content: &str) -> Result<TraceFile, TraceError> {
        let mut manifest = None;
        let mut records = Vec::new();
        for (index, line) in content.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let value: Value = serde_json::from_str(line).map_err(|e| TraceError::Parse {
                line: index + 1,
                message: e.to_string(),
            })?;
            if let Some(m) = value.get("manifest") {
                if manifest.is_none() {
                    manifest = Some(m.clone());
                }
                continue;
            }
            let record: TraceRecord =
                serde_json::from_value(value).map_err(|e| TraceError::Parse {
                    line: index + 1,
                    message: e.to_string(),
                })?;
            records.push(record);
        }
        Ok(TraceFile { manifest, records })
    }
}
