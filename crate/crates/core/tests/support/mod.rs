//! Dialogue fixtures shared by several test targets.
#![allow(dead_code)]

use std::collections::BTreeMap;

use serde_json::json;
use toolflow_core::catalog::{ParameterSpec, ReturnSpec, ToolSpec, ValueType};
use toolflow_core::dialogue::{Dialogue, DialogueStatus, Provenance};
use toolflow_core::filter::Rule;
use toolflow_core::llm::{ChatMessage, ToolCall};

fn param(name: &str, value_type: ValueType) -> ParameterSpec {
    ParameterSpec {
        name: name.into(),
        description: format!("the {name}"),
        value_type,
        required: true,
        extra: BTreeMap::new(),
    }
}

pub fn get_weather() -> ToolSpec {
    ToolSpec {
        name: "get_weather".into(),
        description: "Weather forecast for a city".into(),
        parameters: vec![param("days", ValueType::Integer), param("location", ValueType::String)],
        returns: vec![ReturnSpec {
            name: "forecast".into(),
            description: "the forecast".into(),
            value_type: ValueType::String,
            extra: BTreeMap::new(),
        }],
    }
}

pub fn dialogue(id: &str, messages: Vec<ChatMessage>) -> Dialogue {
    Dialogue {
        id: id.into(),
        tools: vec![get_weather()],
        plan: None,
        messages,
        status: DialogueStatus::Complete,
        provenance: Provenance::default(),
    }
}

fn weather_call(arguments: serde_json::Value) -> ChatMessage {
    ChatMessage::assistant_calls(vec![ToolCall::new("call_1", "get_weather", &arguments)])
}

/// user, call, tool result, assistant summary.
pub fn clean(i: usize) -> Dialogue {
    dialogue(
        &format!("dlg-{i:06}"),
        vec![
            ChatMessage::user(format!("What is the weather in city {i} for {} days?", i % 5 + 1)),
            weather_call(json!({"location": format!("city {i}"), "days": i % 5 + 1})),
            ChatMessage::tool("call_1", "{\"forecast\":\"sunny\"}"),
            ChatMessage::assistant(format!("It will be sunny in city {i}.")),
        ],
    )
}

/// `clean(i)` modified to break exactly `rule`; `variant` picks among the
/// ways of breaking it.
pub fn violating(i: usize, rule: Rule, variant: usize) -> Dialogue {
    let mut d = clean(i);
    match (rule, variant % 2) {
        (Rule::R1, 0) => d.messages[1].tool_calls[0].name = "get_wether".into(),
        (Rule::R1, _) => d.messages[1].tool_calls[0].arguments = "[\"city\"]".into(),
        (Rule::R2, 0) => d.messages[1] = weather_call(json!({"location": "Oslo"})),
        (Rule::R2, _) => d.messages[1] = weather_call(json!({"location": "Oslo", "days": "three"})),
        (Rule::R3, 0) => d.status = DialogueStatus::TurnLimit,
        (Rule::R3, _) => d.status = DialogueStatus::Failed,
        (Rule::R4, _) => {
            d.messages.drain(1..3);
        }
        (Rule::R5, 0) => d.messages[0].content = "   ".into(),
        (Rule::R5, _) => d.messages[2].content.clear(),
        (Rule::R6, 0) => d.messages.insert(1, ChatMessage::user("Also, hello.")),
        (Rule::R6, _) => d.messages[2].tool_call_id = Some("call_7".into()),
        (Rule::R0, _) => unreachable!("R0 applies to raw lines"),
    }
    d
}

/// 50 dialogues, 12 of them each breaking one rule. Returns the corpus and
/// the planted rule per dialogue id.
pub fn planted_corpus() -> (Vec<Dialogue>, BTreeMap<String, Rule>) {
    let plants: [(usize, Rule, usize); 12] = [
        (2, Rule::R1, 0),
        (6, Rule::R1, 1),
        (9, Rule::R2, 0),
        (13, Rule::R2, 1),
        (17, Rule::R3, 0),
        (21, Rule::R3, 1),
        (25, Rule::R4, 0),
        (30, Rule::R5, 0),
        (34, Rule::R5, 1),
        (38, Rule::R6, 0),
        (42, Rule::R6, 1),
        (47, Rule::R1, 0),
    ];
    let mut corpus: Vec<Dialogue> = (0..50).map(clean).collect();
    let mut truth = BTreeMap::new();
    for (i, rule, variant) in plants {
        corpus[i] = violating(i, rule, variant);
        truth.insert(corpus[i].id.clone(), rule);
    }
    (corpus, truth)
}
