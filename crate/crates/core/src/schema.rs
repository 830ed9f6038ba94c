//! Domain schema ontology: intents, slots, and their type/role annotations.
//!
//! A [`Schema`] is the machine-readable contract the agent operates against.
//! It can be loaded from the canonical JSON schema file format, or derived
//! from MultiWOZ-2.2-style and SGD-style service definitions.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised while loading or deriving a schema.
#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("malformed schema document: {0}")]
    Parse(String),
    #[error("schema invariant violated: {0}")]
    Invariant(String),
    #[error("slot '{0}' has no type annotation")]
    MissingAnnotation(String),
    #[error("unknown intent '{0}'")]
    UnknownIntent(String),
}

/// Value-level type of a slot, used by the validator for constraint checks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SlotType {
    /// Closed set of admissible values.
    Categorical(Vec<String>),
    /// 24-hour clock value, canonical form `HH:MM`.
    Time,
    /// Calendar date, canonical form `YYYY-MM-DD`.
    Date,
    /// Non-negative integer.
    Number,
    /// Free text; no format constraint.
    Freeform,
}

impl SlotType {
    /// Short lowercase tag used in the schema file format and prompts.
    pub fn tag(&self) -> &'static str {
        match self {
            SlotType::Categorical(_) => "categorical",
            SlotType::Time => "time",
            SlotType::Date => "date",
            SlotType::Number => "number",
            SlotType::Freeform => "freeform",
        }
    }

    /// True when `value` is an admissible member of a categorical enum.
    /// Comparison is case-insensitive and ignores surrounding whitespace;
    /// stored values keep their source casing.
    pub fn enum_contains(&self, value: &str) -> bool {
        match self {
            SlotType::Categorical(values) => {
                let needle = value.trim().to_lowercase();
                values.iter().any(|v| v.trim().to_lowercase() == needle)
            }
            _ => true,
        }
    }
}

/// Whether a slot must be supplied to complete the intent or merely narrows
/// a search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlotRole {
    Required,
    Filter,
}

impl SlotRole {
    pub fn tag(&self) -> &'static str {
        match self {
            SlotRole::Required => "required",
            SlotRole::Filter => "filter",
        }
    }
}

/// A single slot definition within an intent.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotDef {
    /// Canonical `domain-slotname` id, lowercase.
    pub id: String,
    pub description: String,
    pub slot_type: SlotType,
    pub role: SlotRole,
}

/// An intent definition. Non-transactional intents carry no slots and exist
/// for deterministic out-of-domain routing.
#[derive(Debug, Clone, PartialEq)]
pub struct IntentDef {
    pub id: String,
    pub description: String,
    pub transactional: bool,
    pub slots: Vec<SlotDef>,
}

/// The full domain ontology handed to the engine and validator.
///
/// Immutable after construction; safe to share across dialogue workers.
#[derive(Debug, Clone, PartialEq)]
pub struct Schema {
    pub name: String,
    pub intents: Vec<IntentDef>,
    pub fallback_intent_id: String,
    /// Per-slot generic reference terms (e.g. "restaurant" for
    /// `restaurant-name`) that indicate an unresolved entity.
    pub generic_terms: BTreeMap<String, Vec<String>>,
}

impl Schema {
    /// Checks every type invariant; called by all constructors.
    pub fn validate(&self) -> Result<(), SchemaError> {
        let mut intent_ids = BTreeSet::new();
        for intent in &self.intents {
            if intent.id.is_empty() {
                return Err(SchemaError::Invariant("empty intent id".into()));
            }
            if !intent_ids.insert(intent.id.clone()) {
                return Err(SchemaError::Invariant(format!(
                    "duplicate intent id '{}'",
                    intent.id
                )));
            }
            if !intent.transactional && !intent.slots.is_empty() {
                return Err(SchemaError::Invariant(format!(
                    "non-transactional intent '{}' declares slots",
                    intent.id
                )));
            }
            let mut slot_ids = BTreeSet::new();
            for slot in &intent.slots {
                if slot.id.is_empty() {
                    return Err(SchemaError::Invariant(format!(
                        "empty slot id in intent '{}'",
                        intent.id
                    )));
                }
                if slot.id != slot.id.to_lowercase() {
                    return Err(SchemaError::Invariant(format!(
                        "slot id '{}' is not lowercase",
                        slot.id
                    )));
                }
                if !slot_ids.insert(slot.id.clone()) {
                    return Err(SchemaError::Invariant(format!(
                        "duplicate slot id '{}' in intent '{}'",
                        slot.id, intent.id
                    )));
                }
                if let SlotType::Categorical(values) = &slot.slot_type {
                    if values.is_empty() {
                        return Err(SchemaError::Invariant(format!(
                            "categorical slot '{}' has an empty value list",
                            slot.id
                        )));
                    }
                    let mut seen = BTreeSet::new();
                    for v in values {
                        if !seen.insert(v.trim().to_lowercase()) {
                            return Err(SchemaError::Invariant(format!(
                                "categorical slot '{}' has duplicate value '{}'",
                                slot.id, v
                            )));
                        }
                    }
                }
            }
        }
        match self.intent(&self.fallback_intent_id) {
            None => Err(SchemaError::Invariant(format!(
                "fallback intent '{}' does not exist",
                self.fallback_intent_id
            ))),
            Some(fb) if fb.transactional => Err(SchemaError::Invariant(format!(
                "fallback intent '{}' must be non-transactional",
                self.fallback_intent_id
            ))),
            Some(_) => Ok(()),
        }
    }

    pub fn intent(&self, intent_id: &str) -> Option<&IntentDef> {
        self.intents.iter().find(|i| i.id == intent_id)
    }

    pub fn has_intent(&self, intent_id: &str) -> bool {
        self.intent(intent_id).is_some()
    }

    /// All intent ids in declaration order.
    pub fn intent_ids(&self) -> Vec<&str> {
        self.intents.iter().map(|i| i.id.as_str()).collect()
    }

    /// The set of domains covered by this schema, i.e. the distinct slot-id
    /// prefixes before the first `-`.
    pub fn domains(&self) -> BTreeSet<String> {
        self.intents
            .iter()
            .flat_map(|i| i.slots.iter())
            .map(|s| slot_domain(&s.id).to_string())
            .collect()
    }

    /// First definition of `slot_id` found across all intents. Derivations
    /// keep a slot's type consistent wherever the id repeats.
    pub fn slot_def(&self, slot_id: &str) -> Option<&SlotDef> {
        self.intents
            .iter()
            .flat_map(|i| i.slots.iter())
            .find(|s| s.id == slot_id)
    }

    /// Serializes to the canonical schema file format.
    pub fn to_file_json(&self) -> String {
        let file = SchemaFile::from_schema(self);
        serde_json::to_string_pretty(&file).expect("schema serialization is infallible")
    }
}

/// Domain prefix of a canonical slot id (`hotel-area` -> `hotel`).
pub fn slot_domain(slot_id: &str) -> &str {
    slot_id.split('-').next().unwrap_or(slot_id)
}

/// Returns the ordered slot definitions of `intent_id`.
///
/// Non-transactional intents yield an empty list.
pub fn slots_for_intent<'a>(
    schema: &'a Schema,
    intent_id: &str,
) -> Result<&'a [SlotDef], SchemaError> {
    schema
        .intent(intent_id)
        .map(|i| i.slots.as_slice())
        .ok_or_else(|| SchemaError::UnknownIntent(intent_id.to_string()))
}

// ---------------------------------------------------------------------------
// Canonical schema file format
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemaFile {
    name: String,
    fallback_intent: String,
    intents: Vec<IntentFile>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    generic_terms: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IntentFile {
    id: String,
    description: String,
    transactional: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    slots: Vec<SlotFile>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SlotFile {
    id: String,
    description: String,
    #[serde(rename = "type")]
    slot_type: String,
    role: SlotRole,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    values: Option<Vec<String>>,
}

impl SchemaFile {
    fn from_schema(schema: &Schema) -> Self {
        SchemaFile {
            name: schema.name.clone(),
            fallback_intent: schema.fallback_intent_id.clone(),
            intents: schema
                .intents
                .iter()
                .map(|i| IntentFile {
                    id: i.id.clone(),
                    description: i.description.clone(),
                    transactional: i.transactional,
                    slots: i
                        .slots
                        .iter()
                        .map(|s| SlotFile {
                            id: s.id.clone(),
                            description: s.description.clone(),
                            slot_type: s.slot_type.tag().to_string(),
                            role: s.role,
                            values: match &s.slot_type {
                                SlotType::Categorical(v) => Some(v.clone()),
                                _ => None,
                            },
                        })
                        .collect(),
                })
                .collect(),
            generic_terms: schema.generic_terms.clone(),
        }
    }

    fn into_schema(self) -> Result<Schema, SchemaError> {
        let mut intents = Vec::with_capacity(self.intents.len());
        for intent in self.intents {
            let mut slots = Vec::with_capacity(intent.slots.len());
            for slot in intent.slots {
                let slot_type = match slot.slot_type.as_str() {
                    "categorical" => SlotType::Categorical(slot.values.unwrap_or_default()),
                    "time" => SlotType::Time,
                    "date" => SlotType::Date,
                    "number" => SlotType::Number,
                    "freeform" => SlotType::Freeform,
                    other => {
                        return Err(SchemaError::Parse(format!(
                            "unknown slot type '{other}' on slot '{}'",
                            slot.id
                        )))
                    }
                };
                slots.push(SlotDef {
                    id: slot.id,
                    description: slot.description,
                    slot_type,
                    role: slot.role,
                });
            }
            intents.push(IntentDef {
                id: intent.id,
                description: intent.description,
                transactional: intent.transactional,
                slots,
            });
        }
        let schema = Schema {
            name: self.name,
            intents,
            fallback_intent_id: self.fallback_intent,
            generic_terms: self.generic_terms,
        };
        schema.validate()?;
        Ok(schema)
    }
}

/// Loads a schema from the canonical JSON file format, rejecting any
/// document that violates a type invariant.
pub fn load_schema(document: &str) -> Result<Schema, SchemaError> {
    let file: SchemaFile =
        serde_json::from_str(document).map_err(|e| SchemaError::Parse(e.to_string()))?;
    file.into_schema()
}

// ---------------------------------------------------------------------------
// Service-schema sources (MultiWOZ 2.2 and SGD share this layout)
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
struct ServiceSchema {
    service_name: String,
    #[serde(default)]
    description: String,
    #[serde(default)]
    slots: Vec<ServiceSlot>,
    #[serde(default)]
    intents: Vec<ServiceIntent>,
}

#[derive(Debug, Deserialize)]
struct ServiceSlot {
    name: String,
    #[serde(default)]
    description: String,
    #[serde(default)]
    is_categorical: bool,
    #[serde(default)]
    possible_values: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct ServiceIntent {
    name: String,
    #[serde(default)]
    description: String,
    #[serde(default)]
    is_transactional: bool,
    #[serde(default)]
    required_slots: Vec<String>,
    #[serde(default)]
    optional_slots: BTreeMap<String, serde_json::Value>,
    #[serde(default)]
    result_slots: Vec<String>,
}

fn parse_services(raw: &str) -> Result<Vec<ServiceSchema>, SchemaError> {
    serde_json::from_str(raw).map_err(|e| SchemaError::Parse(e.to_string()))
}

/// Type assignment for MultiWOZ slots, checked in as a data file because the
/// source schema carries no such annotation.
pub type TypeAnnotations = BTreeMap<String, AnnotatedType>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotatedType {
    Categorical,
    Time,
    Date,
    Number,
    Freeform,
}

/// Parses a `{"slot-id": "type"}` JSON document into a [`TypeAnnotations`] map.
pub fn parse_type_annotations(document: &str) -> Result<TypeAnnotations, SchemaError> {
    serde_json::from_str(document).map_err(|e| SchemaError::Parse(e.to_string()))
}

/// The five MultiWOZ domains under evaluation; auxiliary services present in
/// the distribution (bus, hospital, police) are skipped.
pub const MULTIWOZ_DOMAINS: [&str; 5] = ["restaurant", "hotel", "attraction", "train", "taxi"];

pub const FALLBACK_INTENT_ID: &str = "general";

fn fallback_intent() -> IntentDef {
    IntentDef {
        id: FALLBACK_INTENT_ID.to_string(),
        description: "greetings, thanks, small talk, or requests outside the supported domains"
            .to_string(),
        transactional: false,
        slots: Vec::new(),
    }
}

fn dedupe_values(values: &[String]) -> Vec<String> {
    let mut seen = BTreeSet::new();
    values
        .iter()
        .filter(|v| seen.insert(v.trim().to_lowercase()))
        .cloned()
        .collect()
}

/// Generic reference terms for a freeform name slot: the entity noun and its
/// plural (e.g. `restaurant-name` -> ["restaurant", "restaurants"]).
fn generic_terms_for(domain: &str, local_name: &str) -> Vec<String> {
    let noun = local_name
        .strip_suffix("name")
        .map(|s| s.trim_end_matches(['_', '-']))
        .unwrap_or(local_name);
    let noun = if noun.is_empty() {
        // Slot is literally "name": fall back to the domain, minus any
        // service-instance suffix like "_1".
        let base = domain.split('_').next().unwrap_or(domain);
        base.to_string()
    } else {
        noun.to_string()
    };
    let singular = noun.strip_suffix('s').unwrap_or(&noun).to_string();
    if singular.is_empty() {
        return vec![noun];
    }
    vec![singular.clone(), format!("{singular}s")]
}

fn is_name_slot(local_name: &str) -> bool {
    local_name == "name" || local_name.ends_with("_name") || local_name.ends_with("-name")
}

/// Derives the MultiWOZ schema: intents within each domain are merged into a
/// single transactional intent, and every slot receives the type assigned by
/// `annotations`. Slots annotated categorical take their enum from the
/// source's `possible_values`.
pub fn derive_multiwoz_schema(
    raw: &str,
    annotations: &TypeAnnotations,
) -> Result<Schema, SchemaError> {
    let services = parse_services(raw)?;
    let mut intents = Vec::new();
    let mut generic_terms = BTreeMap::new();
    for service in &services {
        let domain = service.service_name.to_lowercase();
        if !MULTIWOZ_DOMAINS.contains(&domain.as_str()) {
            continue;
        }
        let mut slots = Vec::with_capacity(service.slots.len());
        for slot in &service.slots {
            let id = slot.name.to_lowercase();
            let annotated = annotations
                .get(&id)
                .copied()
                .ok_or_else(|| SchemaError::MissingAnnotation(id.clone()))?;
            let slot_type = match annotated {
                AnnotatedType::Categorical => {
                    let values = dedupe_values(&slot.possible_values);
                    if values.is_empty() {
                        return Err(SchemaError::Invariant(format!(
                            "slot '{id}' annotated categorical but the source lists no values"
                        )));
                    }
                    SlotType::Categorical(values)
                }
                AnnotatedType::Time => SlotType::Time,
                AnnotatedType::Date => SlotType::Date,
                AnnotatedType::Number => SlotType::Number,
                AnnotatedType::Freeform => SlotType::Freeform,
            };
            let local = id.strip_prefix(&format!("{domain}-")).unwrap_or(&id);
            if matches!(slot_type, SlotType::Freeform) && is_name_slot(local) {
                generic_terms.insert(id.clone(), generic_terms_for(&domain, local));
            }
            slots.push(SlotDef {
                id,
                description: slot.description.clone(),
                slot_type,
                role: SlotRole::Filter,
            });
        }
        let merged_description = if service.intents.is_empty() {
            service.description.clone()
        } else {
            let parts: Vec<&str> = service
                .intents
                .iter()
                .map(|i| i.description.as_str())
                .filter(|d| !d.is_empty())
                .collect();
            format!("{domain} domain: {}", parts.join("; "))
        };
        intents.push(IntentDef {
            id: domain,
            description: merged_description,
            transactional: true,
            slots,
        });
    }
    if intents.is_empty() {
        return Err(SchemaError::Parse(
            "source defines none of the supported domains".into(),
        ));
    }
    intents.push(fallback_intent());
    let schema = Schema {
        name: "multiwoz".to_string(),
        intents,
        fallback_intent_id: FALLBACK_INTENT_ID.to_string(),
        generic_terms,
    };
    schema.validate()?;
    Ok(schema)
}

/// Derives the SGD schema: one intent per service intent, slot roles from
/// `required_slots`/`optional_slots`, result-only slots excluded, and slots a
/// transactional intent requires promoted into its sibling search intents.
pub fn derive_sgd_schema(raw: &str) -> Result<Schema, SchemaError> {
    let services = parse_services(raw)?;
    let mut intents = Vec::new();
    let mut generic_terms = BTreeMap::new();
    for service in &services {
        let domain = service.service_name.to_lowercase();
        let slot_index: BTreeMap<&str, &ServiceSlot> =
            service.slots.iter().map(|s| (s.name.as_str(), s)).collect();

        // Slots required by a transactional intent that a sibling search
        // intent only reports in result_slots are promoted into that sibling
        // so values survive the search-then-commit flow.
        let mut promoted: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for search in service.intents.iter().filter(|i| !i.is_transactional) {
            for txn in service.intents.iter().filter(|i| i.is_transactional) {
                for slot in &txn.required_slots {
                    let tracked = search.required_slots.contains(slot)
                        || search.optional_slots.contains_key(slot);
                    if !tracked && search.result_slots.contains(slot) {
                        let entry = promoted.entry(search.name.as_str()).or_default();
                        if !entry.contains(&slot.as_str()) {
                            entry.push(slot);
                        }
                    }
                }
            }
        }

        for intent in &service.intents {
            let mut slots = Vec::new();
            let mut push_slot = |name: &str, role: SlotRole| -> Result<(), SchemaError> {
                let source = slot_index.get(name).ok_or_else(|| {
                    SchemaError::Parse(format!(
                        "intent '{}' references undeclared slot '{name}' in service '{}'",
                        intent.name, service.service_name
                    ))
                })?;
                let id = format!("{domain}-{}", name.to_lowercase());
                let slot_type = sgd_slot_type(source)?;
                let local = name.to_lowercase();
                if matches!(slot_type, SlotType::Freeform) && is_name_slot(&local) {
                    generic_terms
                        .entry(id.clone())
                        .or_insert_with(|| generic_terms_for(&domain, &local));
                }
                slots.push(SlotDef {
                    id,
                    description: source.description.clone(),
                    slot_type,
                    role,
                });
                Ok(())
            };
            for name in &intent.required_slots {
                push_slot(name, SlotRole::Required)?;
            }
            for name in intent.optional_slots.keys() {
                push_slot(name, SlotRole::Filter)?;
            }
            for name in promoted.get(intent.name.as_str()).into_iter().flatten() {
                push_slot(name, SlotRole::Filter)?;
            }
            intents.push(IntentDef {
                id: format!("{domain}-{}", intent.name.to_lowercase()),
                description: intent.description.clone(),
                transactional: true,
                slots,
            });
        }
    }
    intents.push(fallback_intent());
    let schema = Schema {
        name: "sgd".to_string(),
        intents,
        fallback_intent_id: FALLBACK_INTENT_ID.to_string(),
        generic_terms,
    };
    schema.validate()?;
    Ok(schema)
}

fn sgd_slot_type(slot: &ServiceSlot) -> Result<SlotType, SchemaError> {
    if slot.is_categorical {
        let values = dedupe_values(&slot.possible_values);
        if values.is_empty() {
            return Err(SchemaError::Invariant(format!(
                "categorical slot '{}' lists no possible values",
                slot.name
            )));
        }
        return Ok(SlotType::Categorical(values));
    }
    let name = slot.name.to_lowercase();
    if name.contains("date") {
        Ok(SlotType::Date)
    } else if name.contains("time") {
        Ok(SlotType::Time)
    } else {
        Ok(SlotType::Freeform)
    }
}
