//! Property tests for the state protocol, fuzzy matching, percentiles, and
//! the schema file format round-trip.

use std::collections::BTreeMap;

use proptest::prelude::*;

use reactod_core::{
    apply_update, fuzzy_match, gold_delta, load_schema, percentile, BeliefState, IntentDef, Schema,
    SlotDef, SlotRole, SlotType, SlotValue, StateUpdate, NULL_SENTINEL,
};

// ---------------------------------------------------------------------------
// state protocol
// ---------------------------------------------------------------------------

const DOMAINS: [&str; 3] = ["hotel", "train", "taxi"];
const SLOTS: [&str; 3] = ["area", "day", "people"];

fn slot_id_strategy() -> impl Strategy<Value = String> {
    (0..DOMAINS.len(), 0..SLOTS.len()).prop_map(|(d, s)| format!("{}-{}", DOMAINS[d], SLOTS[s]))
}

fn value_strategy() -> impl Strategy<Value = String> {
    "[a-z]{1,6}".prop_map(|s| s)
}

fn update_strategy(allow_sentinel: bool) -> impl Strategy<Value = StateUpdate> {
    let entry = (slot_id_strategy(), value_strategy(), any::<bool>());
    prop::collection::vec(entry, 0..4).prop_map(move |entries| {
        let mut update = StateUpdate::default();
        for (slot, value, sentinel) in entries {
            if allow_sentinel && sentinel {
                update.set(slot, SlotValue::null());
            } else {
                update.set(slot, SlotValue::new(value.clone(), value));
            }
        }
        update
    })
}

proptest! {
    /// Without the null sentinel, applied keys only accumulate.
    #[test]
    fn monotonic_upsert_without_sentinel(updates in prop::collection::vec(update_strategy(false), 1..8)) {
        let mut state = BeliefState::new();
        for (turn, update) in updates.iter().enumerate() {
            let next = apply_update(&state, update, turn + 1);
            for key in state.entries.keys() {
                prop_assert!(next.entries.contains_key(key), "key {key} vanished");
            }
            for (key, value) in &update.changes {
                prop_assert_eq!(next.norm(key), Some(value.norm.as_str()));
            }
            state = next;
        }
    }

    /// Sentinel entries remove keys; everything else is unaffected.
    #[test]
    fn sentinel_removes_exactly_its_key(
        base in update_strategy(false),
        victim in slot_id_strategy(),
    ) {
        let state = apply_update(&BeliefState::new(), &base, 1);
        let mut removal = StateUpdate::default();
        removal.set(victim.clone(), SlotValue::null());
        let next = apply_update(&state, &removal, 2);
        prop_assert!(!next.entries.contains_key(&victim));
        for key in state.entries.keys().filter(|k| **k != victim) {
            prop_assert_eq!(next.entries.get(key), state.entries.get(key));
        }
        prop_assert!(next.entries.values().all(|v| v.norm != NULL_SENTINEL));
    }

    /// A delta touching only one domain leaves other domains bit-identical.
    #[test]
    fn cross_domain_preservation(
        base in prop::collection::vec(update_strategy(false), 1..5),
        domain_index in 0..DOMAINS.len(),
        value in value_strategy(),
    ) {
        let mut state = BeliefState::new();
        for (turn, update) in base.iter().enumerate() {
            state = apply_update(&state, update, turn + 1);
        }
        let domain = DOMAINS[domain_index];
        let mut delta = StateUpdate::default();
        delta.set(format!("{domain}-area"), SlotValue::new(value.clone(), value));
        let next = apply_update(&state, &delta, 99);
        for (key, entry) in &state.entries {
            if !key.starts_with(domain) {
                prop_assert_eq!(next.entries.get(key), Some(entry));
            }
        }
    }

    /// gold_delta is a correct inverse: replaying it reproduces the target
    /// state under norm comparison.
    #[test]
    fn gold_delta_replays_to_target(
        prev_updates in prop::collection::vec(update_strategy(true), 0..5),
        curr_updates in prop::collection::vec(update_strategy(true), 0..5),
    ) {
        let mut prev = BeliefState::new();
        for (turn, update) in prev_updates.iter().enumerate() {
            prev = apply_update(&prev, update, turn + 1);
        }
        let mut curr = BeliefState::new();
        for (turn, update) in curr_updates.iter().enumerate() {
            curr = apply_update(&curr, update, turn + 1);
        }
        let delta = gold_delta(&prev, &curr);
        let replayed = apply_update(&prev, &delta, curr.turn_index);
        prop_assert!(replayed.same_norms(&curr));
    }
}

// ---------------------------------------------------------------------------
// fuzzy matching
// ---------------------------------------------------------------------------

proptest! {
    #[test]
    fn fuzzy_match_is_symmetric_and_bounded(a in ".{0,24}", b in ".{0,24}") {
        let ab = fuzzy_match(&a, &b);
        let ba = fuzzy_match(&b, &a);
        prop_assert_eq!(ab, ba);
        prop_assert!((0.0..=1.0).contains(&ab));
    }

    #[test]
    fn fuzzy_match_identity(a in "[a-z ]{0,24}") {
        prop_assert_eq!(fuzzy_match(&a, &a), 1.0);
    }

    /// Token order never affects the score.
    #[test]
    fn fuzzy_match_ignores_token_order(tokens in prop::collection::vec("[a-z]{1,6}", 1..5)) {
        let forward = tokens.join(" ");
        let mut reversed_tokens = tokens.clone();
        reversed_tokens.reverse();
        let reversed = reversed_tokens.join(" ");
        prop_assert_eq!(fuzzy_match(&forward, &reversed), 1.0);
    }
}

// ---------------------------------------------------------------------------
// percentile
// ---------------------------------------------------------------------------

fn textbook_median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

proptest! {
    #[test]
    fn percentile_50_is_the_median(values in prop::collection::vec(0.0f64..1000.0, 1..40)) {
        let mut sorted = values.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let p50 = percentile(&values, 50.0).unwrap();
        prop_assert!((p50 - textbook_median(&sorted)).abs() < 1e-9);
    }

    #[test]
    fn percentile_is_monotone_in_p(values in prop::collection::vec(0.0f64..1000.0, 1..40)) {
        let p25 = percentile(&values, 25.0).unwrap();
        let p75 = percentile(&values, 75.0).unwrap();
        prop_assert!(p25 <= p75);
    }
}

// ---------------------------------------------------------------------------
// schema round-trip
// ---------------------------------------------------------------------------

fn slot_type_strategy() -> impl Strategy<Value = SlotType> {
    prop_oneof![
        prop::collection::btree_set("[a-z]{1,6}", 1..5)
            .prop_map(|values| SlotType::Categorical(values.into_iter().collect())),
        Just(SlotType::Time),
        Just(SlotType::Date),
        Just(SlotType::Number),
        Just(SlotType::Freeform),
    ]
}

fn schema_strategy() -> impl Strategy<Value = Schema> {
    let slot_names = prop::collection::btree_set("[a-z]{1,6}", 0..4);
    let intent = ("[a-z]{1,8}", slot_names).prop_flat_map(|(intent_id, slot_names)| {
        let slots: Vec<_> = slot_names.into_iter().collect();
        let types = prop::collection::vec(slot_type_strategy(), slots.len());
        let roles = prop::collection::vec(
            prop_oneof![Just(SlotRole::Required), Just(SlotRole::Filter)],
            slots.len(),
        );
        (Just(intent_id), Just(slots), types, roles).prop_map(
            |(intent_id, slot_names, types, roles)| IntentDef {
                id: intent_id.clone(),
                description: format!("intent {intent_id}"),
                transactional: true,
                slots: slot_names
                    .into_iter()
                    .zip(types)
                    .zip(roles)
                    .map(|((name, slot_type), role)| SlotDef {
                        id: format!("{intent_id}-{name}"),
                        description: format!("slot {name}"),
                        slot_type,
                        role,
                    })
                    .collect(),
            },
        )
    });
    prop::collection::vec(intent, 0..3).prop_map(|mut intents| {
        // de-duplicate generated intent ids, then append the fallback
        let mut seen = std::collections::BTreeSet::new();
        intents.retain(|i| seen.insert(i.id.clone()));
        intents.push(IntentDef {
            id: "zfallback".into(),
            description: "anything else".into(),
            transactional: false,
            slots: Vec::new(),
        });
        let schema = Schema {
            name: "generated".into(),
            intents,
            fallback_intent_id: "zfallback".into(),
            generic_terms: BTreeMap::new(),
        };
        schema.validate().expect("generated schema is valid");
        schema
    })
}

proptest! {
    #[test]
    fn schema_file_format_round_trips(schema in schema_strategy()) {
        let reloaded = load_schema(&schema.to_file_json()).unwrap();
        prop_assert_eq!(schema, reloaded);
    }
}
