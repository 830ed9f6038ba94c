//! Evaluation report assembly and rendering.
//!
//! A report is rebuilt entirely from a trace file: efficiency and activation
//! statistics come from the records themselves, and accuracy is recomputed
//! from the embedded gold annotations whenever a schema is supplied. Building
//! from the same traces therefore always yields byte-identical JSON.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::GoldTurn;
use crate::metrics::{
    joint_goal_accuracy, validator_activation_report, ActivationReport, JgaResult, JgaScope,
    MetricsError, PredictedTurn, SummaryStats,
};
use crate::schema::Schema;
use crate::state::BeliefState;
use crate::trace::{TraceRecord, TraceValue};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencySection {
    pub llm_calls_per_turn: SummaryStats,
    pub output_tokens_per_turn: SummaryStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// The resolved run manifest, embedded for reproducibility.
    pub manifest: Value,
    pub dialogues: u64,
    pub turns: u64,
    pub fuzzy_threshold: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jga: Option<JgaResult>,
    pub efficiency: EfficiencySection,
    pub activation: ActivationReport,
}

fn map_to_state(map: &std::collections::BTreeMap<String, TraceValue>, turn: usize) -> BeliefState {
    let mut state = BeliefState {
        entries: Default::default(),
        turn_index: turn,
    };
    for (slot, value) in map {
        state.entries.insert(
            slot.clone(),
            crate::state::SlotValue {
                raw: value.raw.clone(),
                norm: value.norm.clone(),
                source_turn: turn,
            },
        );
    }
    state
}

/// Reconstructs the gold units a record carries: one turn-level unit plus one
/// per service frame. Records are self-contained, so they are keyed by their
/// position in the stream (`key`) rather than their original turn number;
/// concatenated runs then pool cleanly even when turns repeat.
fn golds_from_record(record: &TraceRecord, key: usize) -> Vec<GoldTurn> {
    let mut golds = Vec::new();
    if let Some(gold) = &record.gold {
        golds.push(GoldTurn {
            dialogue_id: record.dialogue_id.clone(),
            turn: key,
            user_utterance: String::new(),
            system_utterance: String::new(),
            gold_state: map_to_state(gold, record.turn),
            active_domains: record.active_domains.clone(),
            service: None,
        });
    }
    for frame in &record.frames {
        golds.push(GoldTurn {
            dialogue_id: record.dialogue_id.clone(),
            turn: key,
            user_utterance: String::new(),
            system_utterance: String::new(),
            gold_state: map_to_state(&frame.gold, record.turn),
            active_domains: vec![frame.service.clone()],
            service: Some(frame.service.clone()),
        });
    }
    golds
}

/// Builds the full report from trace records. Accuracy sections appear only
/// when `schema` is given and the records embed gold annotations.
pub fn build_report(
    manifest: Value,
    records: &[TraceRecord],
    schema: Option<&Schema>,
    fuzzy_threshold: f64,
) -> Result<EvalReport, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let calls: Vec<f64> = records.iter().map(|r| r.llm_calls as f64).collect();
    let tokens: Vec<f64> = records.iter().map(|r| r.output_tokens as f64).collect();
    let efficiency = EfficiencySection {
        llm_calls_per_turn: SummaryStats::from_values(&calls)?,
        output_tokens_per_turn: SummaryStats::from_values(&tokens)?,
    };
    let activation = validator_activation_report(records);
    let dialogues: BTreeSet<&str> = records.iter().map(|r| r.dialogue_id.as_str()).collect();

    let jga = match schema {
        None => None,
        Some(schema) => {
            let scored: Vec<&TraceRecord> = records.iter().filter(|r| r.gold.is_some()).collect();
            if scored.is_empty() {
                None
            } else {
                let predictions: Vec<PredictedTurn> = scored
                    .iter()
                    .enumerate()
                    .map(|(key, r)| PredictedTurn {
                        dialogue_id: r.dialogue_id.clone(),
                        turn: key,
                        state: r.state_norms(),
                    })
                    .collect();
                let golds: Vec<GoldTurn> = scored
                    .iter()
                    .enumerate()
                    .flat_map(|(key, r)| golds_from_record(r, key))
                    .collect();
                let mut merged = JgaResult::default();
                let overall = joint_goal_accuracy(
                    &predictions,
                    &golds,
                    JgaScope::Overall,
                    schema,
                    fuzzy_threshold,
                )?;
                merged.overall = overall.overall;
                let domain = joint_goal_accuracy(
                    &predictions,
                    &golds,
                    JgaScope::PerDomain,
                    schema,
                    fuzzy_threshold,
                )?;
                merged.per_domain = domain.per_domain;
                merged.domain_avg = domain.domain_avg;
                if golds.iter().any(|g| g.service.is_some()) {
                    let service = joint_goal_accuracy(
                        &predictions,
                        &golds,
                        JgaScope::PerService,
                        schema,
                        fuzzy_threshold,
                    )?;
                    merged.per_service = service.per_service;
                    merged.service_avg = service.service_avg;
                }
                Some(merged)
            }
        }
    };

    Ok(EvalReport {
        manifest,
        dialogues: dialogues.len() as u64,
        turns: records.len() as u64,
        fuzzy_threshold,
        jga,
        efficiency,
        activation,
    })
}

/// Canonical JSON rendering; stable byte-for-byte for identical inputs.
pub fn report_to_json(report: &EvalReport) -> String {
    let mut out = serde_json::to_string_pretty(report).expect("report serialization");
    out.push('\n');
    out
}

fn pct(value: f64) -> String {
    format!("{:.2}%", value * 100.0)
}

/// Fixed-width text rendering of the report tables.
pub fn render_text_report(report: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "dialogues: {}    turns: {}\n\n",
        report.dialogues, report.turns
    ));

    if let Some(jga) = &report.jga {
        out.push_str("== joint goal accuracy ==\n");
        if let Some(overall) = jga.overall {
            out.push_str(&format!("{:<28}{:>10}\n", "overall JGA", pct(overall)));
        }
        if let Some(avg) = jga.domain_avg {
            out.push_str(&format!("{:<28}{:>10}\n", "domain avg. JGA", pct(avg)));
            for (domain, value) in &jga.per_domain {
                out.push_str(&format!(
                    "{:<28}{:>10}\n",
                    format!("  {domain}"),
                    pct(*value)
                ));
            }
        }
        if let Some(avg) = jga.service_avg {
            out.push_str(&format!("{:<28}{:>10}\n", "avg. service JGA", pct(avg)));
            for (service, value) in &jga.per_service {
                out.push_str(&format!(
                    "{:<28}{:>10}\n",
                    format!("  {service}"),
                    pct(*value)
                ));
            }
        }
        out.push('\n');
    }

    out.push_str("== efficiency ==\n");
    out.push_str(&format!(
        "{:<28}{:>10}{:>10}{:>10}\n",
        "metric", "avg", "p50", "p99"
    ));
    let eff = &report.efficiency;
    out.push_str(&format!(
        "{:<28}{:>10.2}{:>10.2}{:>10.2}\n",
        "llm calls / turn",
        eff.llm_calls_per_turn.avg,
        eff.llm_calls_per_turn.p50,
        eff.llm_calls_per_turn.p99
    ));
    out.push_str(&format!(
        "{:<28}{:>10.2}{:>10.2}{:>10.2}\n\n",
        "output tokens / turn",
        eff.output_tokens_per_turn.avg,
        eff.output_tokens_per_turn.p50,
        eff.output_tokens_per_turn.p99
    ));

    let act = &report.activation;
    out.push_str("== validator activation ==\n");
    out.push_str(&format!("{:<28}{:>10}\n", "turns", act.total_turns));
    let impacted = match act.impacted_fraction {
        Some(fraction) => format!("{} ({:.1}%)", act.impacted_turns, fraction * 100.0),
        None => act.impacted_turns.to_string(),
    };
    out.push_str(&format!("{:<28}{:>10}\n", "impacted", impacted));
    out.push_str(&format!("{:<28}{:>10}\n", "recovered", act.recovered));
    out.push_str(&format!("{:<28}{:>10}\n", "exhausted", act.exhausted));
    let rate = match act.recovery_rate {
        Some(rate) => format!("{:.1}%", rate * 100.0),
        None => "n/a".to_string(),
    };
    out.push_str(&format!("{:<28}{:>10}\n", "recovery rate", rate));
    out.push_str(&format!("{:<28}{:>10}\n", "messages", act.messages_total));
    for (code, count) in &act.messages_by_code {
        out.push_str(&format!("{:<28}{:>10}\n", format!("  {code}"), count));
    }
    if !act.by_category.is_empty() {
        out.push_str(&format!(
            "{:<28}{:>10}{:>10}{:>10}\n",
            "category", "impacted", "recovered", "rate"
        ));
        for (category, stats) in &act.by_category {
            let rate = match stats.recovery_rate {
                Some(rate) => format!("{:.1}%", rate * 100.0),
                None => "n/a".to_string(),
            };
            out.push_str(&format!(
                "{:<28}{:>10}{:>10}{:>10}\n",
                category, stats.impacted_turns, stats.recovered, rate
            ));
        }
    }
    out
}
