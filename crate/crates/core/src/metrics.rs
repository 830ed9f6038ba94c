//! Evaluation metrics: joint goal accuracy, fuzzy value matching,
//! percentiles, and validator activation statistics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::GoldTurn;
use crate::schema::{slot_domain, Schema, SlotType};
use crate::trace::TraceRecord;

/// Similarity a non-categorical value match must reach under token-sort
/// fuzzy comparison. The one matching knob: 0.95 tolerates punctuation and
/// article noise while rejecting different entities.
pub const DEFAULT_FUZZY_THRESHOLD: f64 = 0.95;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty input")]
    EmptyInput,
    #[error("prediction alignment error: {0}")]
    Alignment(String),
}

// ---------------------------------------------------------------------------
// Fuzzy token-sort matching
// ---------------------------------------------------------------------------

fn levenshtein(a: &[char], b: &[char]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut curr = vec![0usize; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        curr[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let cost = usize::from(ca != cb);
            curr[j + 1] = (prev[j + 1] + 1).min(curr[j] + 1).min(prev[j] + cost);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

/// Lowercases, strips punctuation, sorts whitespace tokens, and joins them
/// back into the comparison form.
fn token_sort_normalize(s: &str) -> String {
    let cleaned: String = s
        .to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    let mut tokens: Vec<&str> = cleaned.split_whitespace().collect();
    tokens.sort_unstable();
    tokens.join(" ")
}

/// Token-sort fuzzy similarity in [0, 1]: 1.0 exactly when the normalized
/// token-sorted strings are identical; symmetric by construction.
pub fn fuzzy_match(a: &str, b: &str) -> f64 {
    let na: Vec<char> = token_sort_normalize(a).chars().collect();
    let nb: Vec<char> = token_sort_normalize(b).chars().collect();
    let max_len = na.len().max(nb.len());
    if max_len == 0 {
        return 1.0;
    }
    1.0 - levenshtein(&na, &nb) as f64 / max_len as f64
}

// ---------------------------------------------------------------------------
// Percentiles
// ---------------------------------------------------------------------------

/// Linear-interpolation percentile: rank `1 + p/100 * (n-1)` over the sorted
/// values, interpolating between the surrounding order statistics. `p` must
/// lie in (0, 100].
pub fn percentile(values: &[f64], p: f64) -> Result<f64, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    debug_assert!(p > 0.0 && p <= 100.0, "percentile {p} out of range");
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("percentile over NaN"));
    let n = sorted.len();
    let rank = 1.0 + p / 100.0 * (n as f64 - 1.0);
    let rank = rank.clamp(1.0, n as f64);
    let lo = rank.floor() as usize - 1;
    let hi = rank.ceil() as usize - 1;
    let frac = rank - rank.floor();
    Ok(sorted[lo] + frac * (sorted[hi] - sorted[lo]))
}

/// Mean / P50 / P99 summary of one per-turn series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub avg: f64,
    pub p50: f64,
    pub p99: f64,
}

impl SummaryStats {
    pub fn from_values(values: &[f64]) -> Result<SummaryStats, MetricsError> {
        if values.is_empty() {
            return Err(MetricsError::EmptyInput);
        }
        Ok(SummaryStats {
            avg: values.iter().sum::<f64>() / values.len() as f64,
            p50: percentile(values, 50.0)?,
            p99: percentile(values, 99.0)?,
        })
    }
}

// ---------------------------------------------------------------------------
// Joint goal accuracy
// ---------------------------------------------------------------------------

/// One predicted turn state, keyed for alignment with gold turns.
#[derive(Debug, Clone)]
pub struct PredictedTurn {
    pub dialogue_id: String,
    pub turn: usize,
    /// slot id -> normalized value
    pub state: BTreeMap<String, String>,
}

/// Scoring scope.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JgaScope {
    Overall,
    PerDomain,
    PerService,
}

/// Scores produced by [`joint_goal_accuracy`]; only the fields of the
/// requested scope are populated.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct JgaResult {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub overall: Option<f64>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub per_domain: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub domain_avg: Option<f64>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub per_service: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub service_avg: Option<f64>,
}

/// True when one predicted value counts as matching the gold value for
/// `slot_id`: case-insensitive exact for categorical slots, token-sort fuzzy
/// at `threshold` otherwise (unknown slots compare fuzzily).
pub fn value_matches(
    slot_id: &str,
    predicted: &str,
    gold: &str,
    schema: &Schema,
    threshold: f64,
) -> bool {
    let categorical = matches!(
        schema.slot_def(slot_id).map(|s| &s.slot_type),
        Some(SlotType::Categorical(_))
    );
    if categorical {
        predicted.trim().to_lowercase() == gold.trim().to_lowercase()
    } else {
        fuzzy_match(predicted, gold) >= threshold
    }
}

/// Exact-match test for one evaluation unit: every gold slot matched and no
/// spurious predicted slot, in both directions.
fn states_match(
    predicted: &BTreeMap<String, String>,
    gold: &BTreeMap<String, String>,
    schema: &Schema,
    threshold: f64,
) -> bool {
    if predicted.len() != gold.len() {
        return false;
    }
    gold.iter().all(|(slot, gold_value)| {
        predicted
            .get(slot)
            .is_some_and(|pred| value_matches(slot, pred, gold_value, schema, threshold))
    })
}

fn project(state: &BTreeMap<String, String>, domain: &str) -> BTreeMap<String, String> {
    state
        .iter()
        .filter(|(slot, _)| slot_domain(slot) == domain)
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect()
}

fn gold_norms(gold: &GoldTurn) -> BTreeMap<String, String> {
    gold.gold_state
        .entries
        .iter()
        .map(|(k, v)| (k.clone(), v.norm.clone()))
        .collect()
}

/// Computes joint goal accuracy at the requested scope.
///
/// Predictions align to gold units by `(dialogue_id, turn)`; SGD-style golds
/// may carry several frames per turn, all scored against the same predicted
/// state. Overall JGA requires the full predicted state to exactly match the
/// union of the turn's gold frames; per-domain restricts both sides to one
/// domain over the turns where that domain is active; per-service scores
/// each frame against the predicted state projected to the frame's service.
pub fn joint_goal_accuracy(
    predictions: &[PredictedTurn],
    golds: &[GoldTurn],
    scope: JgaScope,
    schema: &Schema,
    threshold: f64,
) -> Result<JgaResult, MetricsError> {
    let mut by_key: BTreeMap<(&str, usize), &PredictedTurn> = BTreeMap::new();
    for prediction in predictions {
        if by_key
            .insert(
                (prediction.dialogue_id.as_str(), prediction.turn),
                prediction,
            )
            .is_some()
        {
            return Err(MetricsError::Alignment(format!(
                "duplicate prediction for dialogue '{}' turn {}",
                prediction.dialogue_id, prediction.turn
            )));
        }
    }
    let lookup = |gold: &GoldTurn| -> Result<&PredictedTurn, MetricsError> {
        by_key
            .get(&(gold.dialogue_id.as_str(), gold.turn))
            .copied()
            .ok_or_else(|| {
                MetricsError::Alignment(format!(
                    "no prediction for dialogue '{}' turn {}",
                    gold.dialogue_id, gold.turn
                ))
            })
    };

    let mut result = JgaResult::default();
    match scope {
        JgaScope::Overall => {
            // group gold frames into turns
            let mut grouped: BTreeMap<(&str, usize), BTreeMap<String, String>> = BTreeMap::new();
            let mut order: Vec<(&str, usize)> = Vec::new();
            for gold in golds {
                let key = (gold.dialogue_id.as_str(), gold.turn);
                if !grouped.contains_key(&key) {
                    order.push(key);
                }
                grouped.entry(key).or_default().extend(gold_norms(gold));
                lookup(gold)?;
            }
            if order.is_empty() {
                return Err(MetricsError::EmptyInput);
            }
            let correct = order
                .iter()
                .filter(|key| {
                    let prediction = by_key[*key];
                    states_match(&prediction.state, &grouped[*key], schema, threshold)
                })
                .count();
            result.overall = Some(correct as f64 / order.len() as f64);
        }
        JgaScope::PerDomain => {
            // per domain: turns where the domain is active
            let mut counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
            let mut seen: BTreeMap<(&str, usize), Vec<&GoldTurn>> = BTreeMap::new();
            for gold in golds {
                seen.entry((gold.dialogue_id.as_str(), gold.turn))
                    .or_default()
                    .push(gold);
            }
            for (key, frames) in &seen {
                let prediction = by_key.get(key).copied().ok_or_else(|| {
                    MetricsError::Alignment(format!(
                        "no prediction for dialogue '{}' turn {}",
                        key.0, key.1
                    ))
                })?;
                let mut union: BTreeMap<String, String> = BTreeMap::new();
                let mut domains: Vec<String> = Vec::new();
                for frame in frames {
                    union.extend(gold_norms(frame));
                    for domain in &frame.active_domains {
                        if !domains.contains(domain) {
                            domains.push(domain.clone());
                        }
                    }
                }
                for domain in domains {
                    let entry = counts.entry(domain.clone()).or_default();
                    entry.1 += 1;
                    let gold_proj = project(&union, &domain);
                    let pred_proj = project(&prediction.state, &domain);
                    if states_match(&pred_proj, &gold_proj, schema, threshold) {
                        entry.0 += 1;
                    }
                }
            }
            if counts.is_empty() {
                return Err(MetricsError::EmptyInput);
            }
            for (domain, (correct, total)) in &counts {
                result
                    .per_domain
                    .insert(domain.clone(), *correct as f64 / *total as f64);
            }
            result.domain_avg =
                Some(result.per_domain.values().sum::<f64>() / result.per_domain.len() as f64);
        }
        JgaScope::PerService => {
            let mut counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
            for gold in golds {
                let Some(service) = &gold.service else {
                    continue;
                };
                let prediction = lookup(gold)?;
                let entry = counts.entry(service.clone()).or_default();
                entry.1 += 1;
                let pred_proj = project(&prediction.state, service);
                if states_match(&pred_proj, &gold_norms(gold), schema, threshold) {
                    entry.0 += 1;
                }
            }
            if counts.is_empty() {
                return Err(MetricsError::EmptyInput);
            }
            for (service, (correct, total)) in &counts {
                result
                    .per_service
                    .insert(service.clone(), *correct as f64 / *total as f64);
            }
            result.service_avg =
                Some(result.per_service.values().sum::<f64>() / result.per_service.len() as f64);
        }
    }
    Ok(result)
}

// ---------------------------------------------------------------------------
// Validator activation statistics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryActivation {
    pub impacted_turns: u64,
    pub recovered: u64,
    pub exhausted: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recovery_rate: Option<f64>,
}

/// Validator activation analysis over a trace set: which turns triggered at
/// least one correction, what was flagged, and how often the agent recovered
/// (ended the turn non-degraded) after feedback.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ActivationReport {
    pub total_turns: u64,
    pub impacted_turns: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub impacted_fraction: Option<f64>,
    pub messages_total: u64,
    pub messages_by_code: BTreeMap<String, u64>,
    pub recovered: u64,
    pub exhausted: u64,
    /// Absent when no turn was impacted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recovery_rate: Option<f64>,
    pub by_category: BTreeMap<String, CategoryActivation>,
}

pub fn validator_activation_report(records: &[TraceRecord]) -> ActivationReport {
    let mut report = ActivationReport {
        total_turns: records.len() as u64,
        ..ActivationReport::default()
    };
    for record in records {
        let violations: Vec<_> = record.violations().collect();
        if violations.is_empty() {
            continue;
        }
        report.impacted_turns += 1;
        if record.degraded {
            report.exhausted += 1;
        } else {
            report.recovered += 1;
        }
        let mut categories: Vec<&str> = Vec::new();
        for violation in &violations {
            report.messages_total += 1;
            *report
                .messages_by_code
                .entry(violation.code.clone())
                .or_default() += 1;
            if !categories.contains(&violation.category.as_str()) {
                categories.push(&violation.category);
            }
        }
        for category in categories {
            let entry = report.by_category.entry(category.to_string()).or_default();
            entry.impacted_turns += 1;
            if record.degraded {
                entry.exhausted += 1;
            } else {
                entry.recovered += 1;
            }
        }
    }
    if report.total_turns > 0 {
        report.impacted_fraction = Some(report.impacted_turns as f64 / report.total_turns as f64);
    }
    if report.impacted_turns > 0 {
        report.recovery_rate = Some(report.recovered as f64 / report.impacted_turns as f64);
    }
    for category in report.by_category.values_mut() {
        if category.impacted_turns > 0 {
            category.recovery_rate =
                Some(category.recovered as f64 / category.impacted_turns as f64);
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::load_schema;
    use crate::state::BeliefState;

    #[test]
    fn fuzzy_match_basics() {
        assert_eq!(fuzzy_match("x", "x"), 1.0);
        assert_eq!(fuzzy_match("the gandhi", "gandhi the"), 1.0);
        assert_eq!(fuzzy_match("", "abc"), 0.0);
        assert_eq!(fuzzy_match("", ""), 1.0);
        // symmetry and bounds on a few pairs
        for (a, b) in [
            ("the gandhi", "gandhi"),
            ("09:15", "9:15"),
            ("pizza hut city centre", "pizza hut in the city centre"),
        ] {
            let ab = fuzzy_match(a, b);
            let ba = fuzzy_match(b, a);
            assert_eq!(ab, ba);
            assert!((0.0..=1.0).contains(&ab));
        }
        // punctuation and case noise is forgiven
        assert!(fuzzy_match("Pizza Hut, City Centre", "pizza hut city centre") > 0.99);
        // different entities are rejected at the default threshold
        assert!(fuzzy_match("the gandhi", "the golden wok") < DEFAULT_FUZZY_THRESHOLD);
    }

    #[test]
    fn percentile_interpolates_linearly() {
        let values: Vec<f64> = (1..=100).map(f64::from).collect();
        assert!((percentile(&values, 99.0).unwrap() - 99.01).abs() < 1e-9);
        assert_eq!(percentile(&[2.0, 2.0, 2.0, 2.0], 37.0).unwrap(), 2.0);
        // median of an even-length list is the midpoint mean
        assert_eq!(percentile(&[1.0, 2.0, 3.0, 4.0], 50.0).unwrap(), 2.5);
        assert_eq!(percentile(&[5.0, 1.0, 3.0], 100.0).unwrap(), 5.0);
        assert!(matches!(
            percentile(&[], 50.0),
            Err(MetricsError::EmptyInput)
        ));
    }

    fn schema() -> Schema {
        load_schema(
            r#"{
                "name": "mini",
                "fallback_intent": "general",
                "intents": [
                    {"id": "hotel", "description": "h", "transactional": true,
                     "slots": [
                        {"id": "hotel-area", "description": "a", "type": "categorical",
                         "role": "filter", "values": ["centre", "north"]},
                        {"id": "hotel-name", "description": "n", "type": "freeform", "role": "filter"}
                     ]},
                    {"id": "train", "description": "t", "transactional": true,
                     "slots": [{"id": "train-day", "description": "d", "type": "freeform", "role": "filter"}]},
                    {"id": "general", "description": "g", "transactional": false}
                ]
            }"#,
        )
        .unwrap()
    }

    fn gold(dialogue: &str, turn: usize, pairs: &[(&str, &str)], domains: &[&str]) -> GoldTurn {
        GoldTurn {
            dialogue_id: dialogue.to_string(),
            turn,
            user_utterance: String::new(),
            system_utterance: String::new(),
            gold_state: BeliefState::from_pairs(turn, pairs),
            active_domains: domains.iter().map(|d| d.to_string()).collect(),
            service: None,
        }
    }

    fn pred(dialogue: &str, turn: usize, pairs: &[(&str, &str)]) -> PredictedTurn {
        PredictedTurn {
            dialogue_id: dialogue.to_string(),
            turn,
            state: pairs
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }

    #[test]
    fn empty_prediction_matches_empty_gold() {
        let golds = vec![gold("d", 1, &[], &[])];
        let preds = vec![pred("d", 1, &[])];
        let result =
            joint_goal_accuracy(&preds, &golds, JgaScope::Overall, &schema(), 0.95).unwrap();
        assert_eq!(result.overall, Some(1.0));
    }

    #[test]
    fn one_wrong_turn_of_three_scores_two_thirds() {
        let golds = vec![
            gold("d", 1, &[("hotel-area", "north")], &["hotel"]),
            gold(
                "d",
                2,
                &[("hotel-area", "north"), ("hotel-name", "gandhi")],
                &["hotel"],
            ),
            gold(
                "d",
                3,
                &[("hotel-area", "north"), ("hotel-name", "gandhi")],
                &["hotel"],
            ),
        ];
        let preds = vec![
            pred("d", 1, &[("hotel-area", "north")]),
            pred(
                "d",
                2,
                &[("hotel-area", "centre"), ("hotel-name", "gandhi")],
            ),
            pred("d", 3, &[("hotel-area", "north"), ("hotel-name", "gandhi")]),
        ];
        let result =
            joint_goal_accuracy(&preds, &golds, JgaScope::Overall, &schema(), 0.95).unwrap();
        assert!((result.overall.unwrap() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn token_sort_match_counts_for_freeform_slots() {
        let golds = vec![gold("d", 1, &[("hotel-name", "the gandhi")], &["hotel"])];
        let preds = vec![pred("d", 1, &[("hotel-name", "gandhi the")])];
        let result =
            joint_goal_accuracy(&preds, &golds, JgaScope::Overall, &schema(), 0.95).unwrap();
        assert_eq!(result.overall, Some(1.0));
        // categorical slots stay exact
        let golds = vec![gold("d", 1, &[("hotel-area", "north")], &["hotel"])];
        let preds = vec![pred("d", 1, &[("hotel-area", "north north")])];
        let result =
            joint_goal_accuracy(&preds, &golds, JgaScope::Overall, &schema(), 0.95).unwrap();
        assert_eq!(result.overall, Some(0.0));
    }

    #[test]
    fn spurious_predicted_slots_fail_the_turn() {
        let golds = vec![gold("d", 1, &[("hotel-area", "north")], &["hotel"])];
        let preds = vec![pred(
            "d",
            1,
            &[("hotel-area", "north"), ("train-day", "friday")],
        )];
        let result =
            joint_goal_accuracy(&preds, &golds, JgaScope::Overall, &schema(), 0.95).unwrap();
        assert_eq!(result.overall, Some(0.0));
    }

    #[test]
    fn per_domain_scores_active_turns_and_macro_averages() {
        let golds = vec![
            gold("d", 1, &[("hotel-area", "north")], &["hotel"]),
            gold(
                "d",
                2,
                &[("hotel-area", "north"), ("train-day", "friday")],
                &["hotel", "train"],
            ),
        ];
        let preds = vec![
            pred("d", 1, &[("hotel-area", "north")]),
            pred("d", 2, &[("hotel-area", "north"), ("train-day", "monday")]),
        ];
        let result =
            joint_goal_accuracy(&preds, &golds, JgaScope::PerDomain, &schema(), 0.95).unwrap();
        assert_eq!(result.per_domain["hotel"], 1.0);
        assert_eq!(result.per_domain["train"], 0.0);
        assert_eq!(result.domain_avg, Some(0.5));
    }

    #[test]
    fn per_service_scores_frames_independently() {
        let mut g1 = gold(
            "d",
            1,
            &[("restaurants_1-city", "san jose")],
            &["restaurants_1"],
        );
        g1.service = Some("restaurants_1".into());
        let mut g2 = gold("d", 1, &[("travel_1-location", "san jose")], &["travel_1"]);
        g2.service = Some("travel_1".into());
        let preds = vec![pred(
            "d",
            1,
            &[
                ("restaurants_1-city", "san jose"),
                ("travel_1-location", "oakland"),
            ],
        )];
        let result =
            joint_goal_accuracy(&preds, &[g1, g2], JgaScope::PerService, &schema(), 0.95).unwrap();
        assert_eq!(result.per_service["restaurants_1"], 1.0);
        assert_eq!(result.per_service["travel_1"], 0.0);
        assert_eq!(result.service_avg, Some(0.5));
    }

    #[test]
    fn missing_prediction_is_an_alignment_error() {
        let golds = vec![gold("d", 1, &[], &[])];
        assert!(matches!(
            joint_goal_accuracy(&[], &golds, JgaScope::Overall, &schema(), 0.95),
            Err(MetricsError::Alignment(_))
        ));
    }

    #[test]
    fn activation_report_on_empty_trace_set_is_not_applicable() {
        let report = validator_activation_report(&[]);
        assert_eq!(report.impacted_turns, 0);
        assert_eq!(report.recovery_rate, None);
        assert_eq!(report.impacted_fraction, None);
    }
}
