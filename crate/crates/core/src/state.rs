//! Persistent multi-domain belief state with deferred, upsert-only updates.
//!
//! States are immutable snapshots: [`apply_update`] returns a new snapshot and
//! never mutates its input, so rejected intermediate proposals can never leak
//! into the table a later turn observes.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::schema::{slot_domain, Schema};

/// Designated null value: a delta entry carrying this norm removes the slot
/// instead of storing it.
pub const NULL_SENTINEL: &str = "<none>";

/// The annotation scheme's "any value is acceptable" marker. Stored like any
/// other value and exempt from enum and format constraints.
pub const DONTCARE: &str = "dontcare";

#[derive(Debug, Error)]
pub enum StateError {
    #[error("unknown domain '{0}'")]
    UnknownDomain(String),
}

/// A tracked slot value: the surface form as uttered, its canonical
/// normalization, and the turn that last wrote it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotValue {
    pub raw: String,
    pub norm: String,
    pub source_turn: usize,
}

impl SlotValue {
    pub fn new(raw: impl Into<String>, norm: impl Into<String>) -> Self {
        SlotValue {
            raw: raw.into(),
            norm: norm.into(),
            source_turn: 0,
        }
    }

    pub fn null() -> Self {
        SlotValue::new(NULL_SENTINEL, NULL_SENTINEL)
    }

    pub fn is_null(&self) -> bool {
        self.norm == NULL_SENTINEL
    }
}

/// Incremental update for one turn; empty on no-op turns.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StateUpdate {
    pub changes: BTreeMap<String, SlotValue>,
}

impl StateUpdate {
    pub fn is_empty(&self) -> bool {
        self.changes.is_empty()
    }

    pub fn set(&mut self, slot_id: impl Into<String>, value: SlotValue) {
        self.changes.insert(slot_id.into(), value);
    }
}

/// The cumulative slot table after some turn.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BeliefState {
    pub entries: BTreeMap<String, SlotValue>,
    pub turn_index: usize,
}

impl BeliefState {
    pub fn new() -> Self {
        BeliefState::default()
    }

    /// Builds a state from `(slot, norm)` pairs, using the norm as the raw
    /// form; convenient for gold annotations which carry a single string.
    pub fn from_pairs(turn: usize, pairs: &[(&str, &str)]) -> Self {
        let entries = pairs
            .iter()
            .map(|(slot, value)| {
                (
                    slot.to_string(),
                    SlotValue {
                        raw: value.to_string(),
                        norm: value.to_string(),
                        source_turn: turn,
                    },
                )
            })
            .collect();
        BeliefState {
            entries,
            turn_index: turn,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn norm(&self, slot_id: &str) -> Option<&str> {
        self.entries.get(slot_id).map(|v| v.norm.as_str())
    }

    /// Equality on slot keys and norm values only; raw forms and provenance
    /// turns are tracing metadata and do not participate.
    pub fn same_norms(&self, other: &BeliefState) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .all(|(k, v)| other.norm(k) == Some(v.norm.as_str()))
    }
}

/// Applies `delta` to `prev`, returning the state after `turn`.
///
/// New keys are inserted, existing keys overwritten, and keys whose delta
/// value is the null sentinel removed; everything else is preserved
/// unchanged. Written entries are stamped with `turn` as their provenance.
pub fn apply_update(prev: &BeliefState, delta: &StateUpdate, turn: usize) -> BeliefState {
    let mut entries = prev.entries.clone();
    for (slot_id, value) in &delta.changes {
        if value.is_null() {
            entries.remove(slot_id);
        } else {
            let mut stamped = value.clone();
            stamped.source_turn = turn;
            entries.insert(slot_id.clone(), stamped);
        }
    }
    BeliefState {
        entries,
        turn_index: turn,
    }
}

/// The minimal delta that rewrites `prev_gold` into `curr_gold`: changed and
/// new slots carry the current value, vanished slots carry the null sentinel.
pub fn gold_delta(prev_gold: &BeliefState, curr_gold: &BeliefState) -> StateUpdate {
    let mut update = StateUpdate::default();
    for (slot_id, value) in &curr_gold.entries {
        if prev_gold.norm(slot_id) != Some(value.norm.as_str()) {
            update.changes.insert(slot_id.clone(), value.clone());
        }
    }
    for slot_id in prev_gold.entries.keys() {
        if !curr_gold.entries.contains_key(slot_id) {
            update.changes.insert(slot_id.clone(), SlotValue::null());
        }
    }
    update
}

/// Restricts `state` to the entries whose slot-id prefix equals `domain`.
pub fn project_domain(
    state: &BeliefState,
    domain: &str,
    schema: &Schema,
) -> Result<BeliefState, StateError> {
    if !schema.domains().contains(domain) {
        return Err(StateError::UnknownDomain(domain.to_string()));
    }
    let entries = state
        .entries
        .iter()
        .filter(|(slot_id, _)| slot_domain(slot_id) == domain)
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    Ok(BeliefState {
        entries,
        turn_index: state.turn_index,
    })
}
