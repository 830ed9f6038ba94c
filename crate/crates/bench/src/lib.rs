//! Shared fixtures for the criterion benches.

use reactod_core::{load_schema, Schema};

/// A five-slot hotel/taxi schema exercising categorical, time, and freeform
/// constraint paths.
pub fn bench_schema() -> Schema {
    load_schema(
        r#"{
            "name": "bench",
            "fallback_intent": "general",
            "intents": [
                {"id": "hotel", "description": "find and book hotels", "transactional": true,
                 "slots": [
                    {"id": "hotel-area", "description": "area of town", "type": "categorical",
                     "role": "filter", "values": ["centre", "east", "north", "south", "west"]},
                    {"id": "hotel-pricerange", "description": "price range", "type": "categorical",
                     "role": "filter", "values": ["cheap", "moderate", "expensive"]},
                    {"id": "hotel-stars", "description": "star rating", "type": "number", "role": "filter"},
                    {"id": "hotel-name", "description": "hotel name", "type": "freeform", "role": "filter"}
                 ]},
                {"id": "taxi", "description": "book a taxi", "transactional": true,
                 "slots": [
                    {"id": "taxi-arriveby", "description": "arrival deadline", "type": "time", "role": "filter"}
                 ]},
                {"id": "general", "description": "anything else", "transactional": false}
            ],
            "generic_terms": {"hotel-name": ["hotel", "hotels"]}
        }"#,
    )
    .expect("bench schema is valid")
}
