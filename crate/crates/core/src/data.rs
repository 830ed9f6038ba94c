//! Gold dialogue ingestion for the MultiWOZ 2.1 and SGD test splits.
//!
//! Loaders normalize both corpora into the same per-turn unit: a user
//! utterance, the following system utterance, and the cumulative gold state
//! with canonical `domain-slotname` ids. SGD dialogues yield one unit per
//! frame, tagged with its service.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Deserialize;
use serde_json::Value;
use thiserror::Error;

use crate::schema::MULTIWOZ_DOMAINS;
use crate::state::BeliefState;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("dataset parse error: {0}")]
    Parse(String),
    #[error("test split list not found under {0}")]
    SplitListMissing(String),
    #[error("failed to read {path}: {message}")]
    Io { path: String, message: String },
}

fn read_file(path: &Path) -> Result<String, DataError> {
    fs::read_to_string(path).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// One gold evaluation unit: a turn (MultiWOZ) or a service frame (SGD).
#[derive(Debug, Clone)]
pub struct GoldTurn {
    pub dialogue_id: String,
    /// 1-based user-turn index within the dialogue.
    pub turn: usize,
    pub user_utterance: String,
    /// System response following this user turn; empty on a trailing turn.
    pub system_utterance: String,
    /// Cumulative gold state after this turn.
    pub gold_state: BeliefState,
    pub active_domains: Vec<String>,
    /// Owning service for SGD frames.
    pub service: Option<String>,
}

/// An ordered gold dialogue.
#[derive(Debug, Clone)]
pub struct Dialogue {
    pub dialogue_id: String,
    pub turns: Vec<GoldTurn>,
}

// ---------------------------------------------------------------------------
// MultiWOZ 2.1
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
struct MwLogEntry {
    #[serde(default)]
    text: String,
    #[serde(default)]
    metadata: BTreeMap<String, MwDomainMeta>,
}

#[derive(Debug, Deserialize)]
struct MwDomainMeta {
    #[serde(default)]
    semi: BTreeMap<String, Value>,
    #[serde(default)]
    book: BTreeMap<String, Value>,
}

#[derive(Debug, Deserialize)]
struct MwDialogue {
    log: Vec<MwLogEntry>,
}

/// Values the annotation scheme uses for "absent"; `dontcare` is a real
/// value and is kept.
fn mw_value_absent(value: &str) -> bool {
    let v = value.trim().to_lowercase();
    v.is_empty() || v == "not mentioned" || v == "none"
}

fn mw_slot_key(domain: &str, group: &str, slot: &str) -> String {
    let slot = slot.to_lowercase().replace(' ', "");
    if group == "book" {
        format!("{domain}-book{slot}")
    } else {
        format!("{domain}-{slot}")
    }
}

fn mw_state_from_metadata(metadata: &BTreeMap<String, MwDomainMeta>, turn: usize) -> BeliefState {
    let mut pairs: Vec<(String, String)> = Vec::new();
    for (domain, meta) in metadata {
        let domain = domain.to_lowercase();
        if !MULTIWOZ_DOMAINS.contains(&domain.as_str()) {
            continue;
        }
        for (group, slots) in [("semi", &meta.semi), ("book", &meta.book)] {
            for (slot, value) in slots {
                if slot == "booked" {
                    continue;
                }
                let Some(value) = value.as_str() else {
                    continue;
                };
                if mw_value_absent(value) {
                    continue;
                }
                pairs.push((mw_slot_key(&domain, group, slot), value.trim().to_string()));
            }
        }
    }
    let borrowed: Vec<(&str, &str)> = pairs
        .iter()
        .map(|(k, v)| (k.as_str(), v.as_str()))
        .collect();
    BeliefState::from_pairs(turn, &borrowed)
}

fn active_domains_of(state: &BeliefState) -> Vec<String> {
    let mut domains: Vec<String> = Vec::new();
    for slot_id in state.entries.keys() {
        let domain = crate::schema::slot_domain(slot_id).to_string();
        if !domains.contains(&domain) {
            domains.push(domain);
        }
    }
    domains.sort();
    domains
}

const SPLIT_LIST_CANDIDATES: [&str; 3] = ["testListFile.txt", "testListFile.json", "testListFile"];

/// Loads the MultiWOZ 2.1 test split: `data.json` filtered by the test list
/// file, with per-turn cumulative gold states in canonical slot form.
pub fn load_multiwoz(path: &Path) -> Result<Vec<Dialogue>, DataError> {
    let list_path = SPLIT_LIST_CANDIDATES
        .iter()
        .map(|name| path.join(name))
        .find(|p| p.exists())
        .ok_or_else(|| DataError::SplitListMissing(path.display().to_string()))?;
    let test_list: Vec<String> = read_file(&list_path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect();

    let data_raw = read_file(&path.join("data.json"))?;
    let data: BTreeMap<String, MwDialogue> =
        serde_json::from_str(&data_raw).map_err(|e| DataError::Parse(e.to_string()))?;

    let mut dialogues = Vec::with_capacity(test_list.len());
    for name in &test_list {
        let dialogue = data
            .get(name)
            .or_else(|| data.get(&format!("{name}.json")))
            .or_else(|| data.get(name.trim_end_matches(".json")))
            .ok_or_else(|| {
                DataError::Parse(format!("test dialogue '{name}' missing from data.json"))
            })?;
        let dialogue_id = name.trim_end_matches(".json").to_string();
        let mut turns = Vec::new();
        let mut log = dialogue.log.iter();
        let mut turn = 0;
        // user and system entries alternate; a trailing unpaired user turn
        // has no gold annotation and is skipped
        while let (Some(user), Some(system)) = (log.next(), log.next()) {
            turn += 1;
            let gold_state = mw_state_from_metadata(&system.metadata, turn);
            let active_domains = active_domains_of(&gold_state);
            turns.push(GoldTurn {
                dialogue_id: dialogue_id.clone(),
                turn,
                user_utterance: user.text.clone(),
                system_utterance: system.text.clone(),
                gold_state,
                active_domains,
                service: None,
            });
        }
        dialogues.push(Dialogue { dialogue_id, turns });
    }
    Ok(dialogues)
}

// ---------------------------------------------------------------------------
// SGD
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
struct SgdDialogue {
    dialogue_id: String,
    #[serde(default)]
    turns: Vec<SgdTurn>,
}

#[derive(Debug, Deserialize)]
struct SgdTurn {
    speaker: String,
    #[serde(default)]
    utterance: String,
    #[serde(default)]
    frames: Vec<SgdFrame>,
}

#[derive(Debug, Deserialize)]
struct SgdFrame {
    service: String,
    #[serde(default)]
    state: Option<SgdState>,
}

#[derive(Debug, Deserialize)]
struct SgdState {
    #[serde(default)]
    slot_values: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Deserialize)]
struct SgdServiceName {
    service_name: String,
}

/// Loads the SGD test directory: `schema.json` plus every `dialogues_*.json`
/// file, yielding one gold unit per user-turn frame tagged with its service.
/// Annotations may list several acceptable values per slot; the first is
/// taken as canonical.
pub fn load_sgd(dir: &Path) -> Result<Vec<Dialogue>, DataError> {
    let schema_raw = read_file(&dir.join("schema.json"))?;
    let services: Vec<SgdServiceName> =
        serde_json::from_str(&schema_raw).map_err(|e| DataError::Parse(e.to_string()))?;
    let known: Vec<String> = services.iter().map(|s| s.service_name.clone()).collect();

    let mut dialogue_files: Vec<_> = fs::read_dir(dir)
        .map_err(|e| DataError::Io {
            path: dir.display().to_string(),
            message: e.to_string(),
        })?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .map(|n| n.starts_with("dialogues_") && n.ends_with(".json"))
                .unwrap_or(false)
        })
        .collect();
    dialogue_files.sort();
    if dialogue_files.is_empty() {
        return Err(DataError::Parse(format!(
            "no dialogues_*.json files under {}",
            dir.display()
        )));
    }

    let mut dialogues = Vec::new();
    for file in dialogue_files {
        let raw = read_file(&file)?;
        let parsed: Vec<SgdDialogue> = serde_json::from_str(&raw)
            .map_err(|e| DataError::Parse(format!("{}: {e}", file.display())))?;
        for dialogue in parsed {
            let mut turns = Vec::new();
            let mut turn = 0;
            let mut entries = dialogue.turns.iter().peekable();
            while let Some(entry) = entries.next() {
                if !entry.speaker.eq_ignore_ascii_case("user") {
                    continue;
                }
                turn += 1;
                let system_utterance = entries
                    .peek()
                    .filter(|next| next.speaker.eq_ignore_ascii_case("system"))
                    .map(|next| next.utterance.clone())
                    .unwrap_or_default();
                for frame in &entry.frames {
                    if !known.contains(&frame.service) {
                        return Err(DataError::Parse(format!(
                            "dialogue {} references service '{}' absent from schema.json",
                            dialogue.dialogue_id, frame.service
                        )));
                    }
                    let service = frame.service.to_lowercase();
                    let pairs: Vec<(String, String)> = frame
                        .state
                        .as_ref()
                        .map(|state| {
                            state
                                .slot_values
                                .iter()
                                .filter_map(|(slot, values)| {
                                    values.first().map(|value| {
                                        (
                                            format!("{service}-{}", slot.to_lowercase()),
                                            value.clone(),
                                        )
                                    })
                                })
                                .collect()
                        })
                        .unwrap_or_default();
                    let borrowed: Vec<(&str, &str)> = pairs
                        .iter()
                        .map(|(k, v)| (k.as_str(), v.as_str()))
                        .collect();
                    let gold_state = BeliefState::from_pairs(turn, &borrowed);
                    turns.push(GoldTurn {
                        dialogue_id: dialogue.dialogue_id.clone(),
                        turn,
                        user_utterance: entry.utterance.clone(),
                        system_utterance: system_utterance.clone(),
                        gold_state,
                        active_domains: vec![service.clone()],
                        service: Some(service),
                    });
                }
            }
            dialogues.push(Dialogue {
                dialogue_id: dialogue.dialogue_id.clone(),
                turns,
            });
        }
    }
    Ok(dialogues)
}

/// Distinct services across a loaded SGD split.
pub fn sgd_services(dialogues: &[Dialogue]) -> Vec<String> {
    let mut services: Vec<String> = dialogues
        .iter()
        .flat_map(|d| d.turns.iter())
        .filter_map(|t| t.service.clone())
        .collect();
    services.sort();
    services.dedup();
    services
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn fixture_dir(name: &str) -> PathBuf {
        PathBuf::from(env!("CARGO_MANIFEST_DIR"))
            .join("../../fixtures")
            .join(name)
    }

    #[test]
    fn multiwoz_mini_fixture_matches_frozen_states() {
        let dialogues = load_multiwoz(&fixture_dir("multiwoz_mini")).unwrap();
        assert_eq!(dialogues.len(), 2);

        let first = &dialogues[0];
        assert_eq!(first.dialogue_id, "MINI0001");
        assert_eq!(first.turns.len(), 3);
        assert_eq!(
            first.turns[0].user_utterance,
            "i need a cheap hotel in the north"
        );
        // frozen hand annotation, turn by turn
        let t1 = &first.turns[0].gold_state;
        assert_eq!(t1.len(), 2);
        assert_eq!(t1.norm("hotel-area"), Some("north"));
        assert_eq!(t1.norm("hotel-pricerange"), Some("cheap"));
        let t2 = &first.turns[1].gold_state;
        assert_eq!(t2.len(), 3);
        assert_eq!(t2.norm("hotel-bookpeople"), Some("2"));
        let t3 = &first.turns[2].gold_state;
        assert_eq!(t3.len(), 5);
        assert_eq!(t3.norm("train-day"), Some("friday"));
        assert_eq!(t3.norm("train-destination"), Some("cambridge"));
        assert_eq!(first.turns[2].active_domains, vec!["hotel", "train"]);

        // "not mentioned" and empty values never surface
        for dialogue in &dialogues {
            for turn in &dialogue.turns {
                for value in turn.gold_state.entries.values() {
                    assert!(!mw_value_absent(&value.norm));
                }
            }
        }
    }

    #[test]
    fn multiwoz_missing_split_list_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("data.json"), "{}").unwrap();
        assert!(matches!(
            load_multiwoz(dir.path()),
            Err(DataError::SplitListMissing(_))
        ));
    }

    #[test]
    fn sgd_mini_fixture_matches_frozen_states() {
        let dialogues = load_sgd(&fixture_dir("sgd_mini")).unwrap();
        assert_eq!(dialogues.len(), 2);
        let services = sgd_services(&dialogues);
        assert_eq!(services, vec!["restaurants_1", "travel_1"]);

        let first = &dialogues[0];
        assert_eq!(first.dialogue_id, "1_00000");
        // turn 2 has two frames, one per service
        let turn2: Vec<&GoldTurn> = first.turns.iter().filter(|t| t.turn == 2).collect();
        assert_eq!(turn2.len(), 2);
        let restaurant = turn2
            .iter()
            .find(|t| t.service.as_deref() == Some("restaurants_1"))
            .unwrap();
        assert_eq!(
            restaurant.gold_state.norm("restaurants_1-city"),
            Some("san jose")
        );
        let travel = turn2
            .iter()
            .find(|t| t.service.as_deref() == Some("travel_1"))
            .unwrap();
        assert_eq!(
            travel.gold_state.norm("travel_1-location"),
            Some("san jose")
        );
    }

    #[test]
    fn sgd_unknown_service_is_a_parse_error_naming_it() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("schema.json"),
            r#"[{"service_name": "Known_1"}]"#,
        )
        .unwrap();
        std::fs::write(
            dir.path().join("dialogues_001.json"),
            r#"[{"dialogue_id": "x", "turns": [
                {"speaker": "USER", "utterance": "hi",
                 "frames": [{"service": "Mystery_9", "state": {"slot_values": {}}}]}
            ]}]"#,
        )
        .unwrap();
        let err = load_sgd(dir.path()).unwrap_err();
        assert!(matches!(err, DataError::Parse(ref msg) if msg.contains("Mystery_9")));
    }
}
