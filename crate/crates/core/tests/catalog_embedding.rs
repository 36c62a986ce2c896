use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use serde_json::json;
use toolflow_core::catalog::{load_catalog, save_catalog, LoadMode, ParameterSpec, ReturnSpec, ToolCatalog, ToolSpec, ValueType};
use toolflow_core::embedding::{cosine, embed_catalog, EmbeddingVector, MockEmbedder};

const THREE_TOOLS: &str = r#"[
  {"type": "function", "function": {
    "name": "getcurrency",
    "description": "Get the current exchange rate between two currencies",
    "parameters": {"type": "object", "properties": {
      "basecurrency": {"type": "string", "description": "The currency to convert from"},
      "targetcurrency": {"type": "string", "description": "The currency to convert to"}},
      "required": ["basecurrency", "targetcurrency"]},
    "results": {"type": "object", "properties": {
      "exchangerate": {"type": "number", "description": "The current exchange rate from base currency to target currency"},
      "last_updated": {"type": "string", "description": "When the rate was last updated"}}}}},
  {"type": "function", "function": {
    "name": "get_weather",
    "description": "Weather forecast for a place",
    "parameters": {"type": "object", "properties": {
      "location": {"type": "string", "description": "City name"},
      "days": {"type": "integer", "description": "Forecast length", "minimum": 1}},
      "required": ["location"]},
    "results": {"type": "object", "properties": {
      "forecast": {"type": "array", "description": "Daily forecasts", "items": {"type": "string"}}}}}},
  {"type": "function", "function": {
    "name": "ping",
    "description": "Check that the service is up",
    "parameters": {"type": "object", "properties": {}, "required": []},
    "results": {"type": "object", "properties": {}}}}
]"#;

#[test]
fn three_tool_file_round_trips_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let catalog = ToolCatalog::parse(THREE_TOOLS, LoadMode::Strict, "inline").unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    save_catalog(&catalog, &a).unwrap();
    let reloaded = load_catalog(&a, LoadMode::Strict).unwrap();
    assert_eq!(reloaded.tools, catalog.tools);
    save_catalog(&reloaded, &b).unwrap();
    let (x, y) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(x, y);
    assert_eq!(reloaded.to_canonical_json(), catalog.to_canonical_json());
    assert_eq!(reloaded.digest(), catalog.digest());
    assert!(x.ends_with(b"\n") && !x.ends_with(b"\n\n"));
}

#[test]
fn member_order_does_not_change_digest() {
    let reordered = THREE_TOOLS.replace(
        r#""basecurrency": {"type": "string", "description": "The currency to convert from"},
      "targetcurrency": {"type": "string", "description": "The currency to convert to"}"#,
        r#""targetcurrency": {"description": "The currency to convert to", "type": "string"},
      "basecurrency": {"description": "The currency to convert from", "type": "string"}"#,
    );
    assert_ne!(reordered, THREE_TOOLS);
    let a = ToolCatalog::parse(THREE_TOOLS, LoadMode::Strict, "a").unwrap();
    let b = ToolCatalog::parse(&reordered, LoadMode::Strict, "b").unwrap();
    assert_eq!(a.digest(), b.digest());
}

fn value_type() -> impl Strategy<Value = ValueType> {
    prop_oneof![
        Just(ValueType::String),
        Just(ValueType::Number),
        Just(ValueType::Integer),
        Just(ValueType::Boolean),
        Just(ValueType::Object),
        Just(ValueType::Array),
    ]
}

fn tool() -> impl Strategy<Value = ToolSpec> {
    let desc = "[A-Za-z][A-Za-z0-9 ,.'\"/-]{0,30}";
    (
        "[a-z][a-z0-9_]{0,10}",
        desc,
        prop::collection::btree_map("[a-z][a-z_]{0,8}", (desc, value_type(), any::<bool>()), 0..4),
        prop::collection::btree_map("[a-z][a-z_]{0,8}", (desc, value_type()), 0..3),
    )
        .prop_map(|(name, description, params, returns)| ToolSpec {
            name,
            description,
            parameters: params
                .into_iter()
                .map(|(name, (description, value_type, required))| ParameterSpec {
                    name,
                    description,
                    value_type,
                    required,
                    extra: BTreeMap::new(),
                })
                .collect(),
            returns: returns
                .into_iter()
                .map(|(name, (description, value_type))| ReturnSpec {
                    name,
                    description,
                    value_type,
                    extra: BTreeMap::new(),
                })
                .collect(),
        })
}

fn catalog() -> impl Strategy<Value = ToolCatalog> {
    prop::collection::vec(tool(), 1..6).prop_filter_map("unique names", |tools| {
        let names: BTreeSet<&str> = tools.iter().map(|t| t.name.as_str()).collect();
        (names.len() == tools.len()).then(|| ToolCatalog::from_tools(tools, "generated").unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn save_load_round_trip(catalog in catalog()) {
        let text = catalog.to_canonical_json();
        let back = ToolCatalog::parse(&text, LoadMode::Strict, "generated").unwrap();
        prop_assert_eq!(&back.tools, &catalog.tools);
        prop_assert_eq!(back.to_canonical_json(), text);
    }
}

#[test]
fn cosine_hand_value() {
    let a = EmbeddingVector::new(vec![1.0, 2.0, 3.0]).unwrap();
    let b = EmbeddingVector::new(vec![4.0, 5.0, 6.0]).unwrap();
    let expected = 32.0 / (14f64.sqrt() * 77f64.sqrt());
    assert!((cosine(&a, &b).unwrap() - expected).abs() < 1e-12);
    assert!((expected - 0.974631846).abs() < 1e-9);
}

fn two_by_two() -> ToolCatalog {
    let records = json!([
        {"type": "function", "function": {"name": "a", "description": "tool a",
          "parameters": {"type": "object", "properties": {
            "city": {"type": "string", "description": "City name"},
            "date": {"type": "string", "description": "Travel date"}}, "required": []},
          "results": {"type": "object", "properties": {}}}},
        {"type": "function", "function": {"name": "b", "description": "tool b",
          "parameters": {"type": "object", "properties": {
            "city": {"type": "string", "description": "City name"},
            "guests": {"type": "integer", "description": "Number of guests"}}, "required": []},
          "results": {"type": "object", "properties": {
            "price": {"type": "number", "description": "Total price"}}}}}
    ]);
    ToolCatalog::parse(&records.to_string(), LoadMode::Strict, "two").unwrap()
}

#[tokio::test]
async fn store_covers_every_field() {
    let provider = MockEmbedder::default();
    let store = embed_catalog(&two_by_two(), &provider, None).await.unwrap();
    assert_eq!(store.len(), 5);
    // "city: City name" appears on both tools.
    assert_eq!(store.distinct_texts(), 4);
    assert_eq!(provider.texts_embedded(), 4);
}

#[tokio::test]
async fn warm_cache_makes_no_calls_and_dedups_lines() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache.jsonl");
    let catalog = two_by_two();

    let cold = MockEmbedder::default();
    let first = embed_catalog(&catalog, &cold, Some(&cache)).await.unwrap();
    assert!(cold.calls() > 0);
    let lines = std::fs::read_to_string(&cache).unwrap().lines().count();
    assert_eq!(lines, 4, "shared field text stored once");

    let warm = MockEmbedder::default();
    let second = embed_catalog(&catalog, &warm, Some(&cache)).await.unwrap();
    assert_eq!(warm.calls(), 0);
    assert_eq!(std::fs::read_to_string(&cache).unwrap().lines().count(), 4);
    for key in first.keys() {
        assert_eq!(first.get(key), second.get(key));
    }
}

#[tokio::test]
async fn cache_with_other_dimension_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache.jsonl");
    embed_catalog(&two_by_two(), &MockEmbedder::new(8), Some(&cache)).await.unwrap();
    assert!(embed_catalog(&two_by_two(), &MockEmbedder::new(16), Some(&cache)).await.is_err());
}
