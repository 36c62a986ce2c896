//! Prompt templates for every backend-driven step. The first line of each
//! system prompt is stable; the simulated backend keys on it.

pub const PLAN_HEADER: &str = "You are planning a multi-turn conversation between a user and an AI assistant that can call tools.";
pub const USER_HEADER: &str = "You are role-playing the USER in a conversation with an AI assistant.";
pub const ASSISTANT_HEADER: &str = "You are a helpful assistant that can call tools.";
pub const TOOL_HEADER: &str = "You are simulating the backend of an API tool.";
pub const RUBRIC_HEADER: &str = "You are grading a synthetic dialogue between a user and a tool-using AI assistant.";
pub const ENRICH_HEADER: &str = "You are completing missing documentation for an API tool.";

pub const PLAN_SYSTEM: &str = "You are planning a multi-turn conversation between a user and an AI assistant that can call tools.
Given the tools below, write the requests the user will make over the conversation, in order.
- Requests should build on each other: a later request may depend on the result of an earlier tool call or reuse details the user already gave.
- Mix tool requests with turns that need no tool, such as chitchat or follow-up remarks.
- Every tool must be needed by at least one request.
- Write between {min_items} and {max_items} requests.
Respond with only a JSON array. Each element is an object with keys \"intent\" (one sentence describing what the user wants), \"kind\" (\"tool_call\" or \"chitchat\") and \"tools\" (names of the tools the request needs; empty for chitchat).";

pub fn render_plan_system(min_items: usize, max_items: usize) -> String {
    PLAN_SYSTEM
        .replace("{min_items}", &min_items.to_string())
        .replace("{max_items}", &max_items.to_string())
}

pub fn render_plan_user(tools_json: &str) -> String {
    format!("Tools:\n```json\n{tools_json}\n```")
}

pub fn render_plan_retry(violations: &str) -> String {
    format!("The plan was rejected:\n{violations}\nReply again with a corrected JSON array only.")
}

pub const USER_PLAN_SYSTEM: &str = "You are role-playing the USER in a conversation with an AI assistant.
Write like a real person, one message at a time, and never reveal that you follow a plan.
Your requests for this conversation, in order:
```json
{plan}
```
{position}
First decide whether the assistant's latest reply completed the current request. If it did, move on to the next request; if it did not (for example the assistant asked for missing information), stay on it and answer the assistant.
Reply in exactly this format:
line 1: a JSON object {\"item_index\": <index of the request your message is about, or null when every request is done>, \"finished\": <true if the current request is completed>}
following lines: your message to the assistant (nothing when item_index is null).";

pub const USER_IMPROVISE_SYSTEM: &str = "You are role-playing the USER in a conversation with an AI assistant.
Write like a real person, one message at a time. The assistant can use these tools:
```json
{tools}
```
Make up realistic requests that need these tools, one request at a time; casual conversation in between is fine. Try to need every tool, and end the conversation when you have nothing left to ask.
{position}
Reply in exactly this format:
line 1: a JSON object {\"item_index\": <number of the request your message is about, counting from 0, or null to end the conversation>, \"finished\": <true if your current request is completed>}
following lines: your message to the assistant (nothing when item_index is null).";

pub fn position_line(current: Option<usize>) -> String {
    match current {
        None => "The conversation has not started; your first message is about request #0.".into(),
        Some(i) => format!("Current request: #{i}"),
    }
}

pub fn render_user_plan_system(plan_json: &str, current: Option<usize>) -> String {
    USER_PLAN_SYSTEM
        .replace("{plan}", plan_json)
        .replace("{position}", &position_line(current))
}

pub fn render_user_improvise_system(tools_json: &str, current: Option<usize>) -> String {
    USER_IMPROVISE_SYSTEM
        .replace("{tools}", tools_json)
        .replace("{position}", &position_line(current))
}

pub const ASSISTANT_SYSTEM: &str = "You are a helpful assistant that can call tools.
Decide whether the user's latest request needs a tool. If it does not (small talk, opinions, general knowledge), answer directly.
If it does, check the tool documentation: when a required parameter is missing from the conversation, ask the user for it instead of guessing; otherwise call the tool.
Once tool results arrive, answer the user using them.";

pub const TOOL_SYSTEM: &str = "You are simulating the backend of an API tool.
Given the tool documentation and a call, produce a realistic result.
Tool documentation:
```json
{tool}
```
Respond with only a JSON object whose keys are fields declared under \"results\" and whose values have the declared types. Do not add other keys.";

pub fn render_tool_system(tool_json: &str) -> String {
    TOOL_SYSTEM.replace("{tool}", tool_json)
}

pub fn render_tool_call(name: &str, arguments: &str) -> String {
    format!("Call: {name}\nArguments: {arguments}")
}

pub const RUBRIC_SYSTEM: &str = "You are grading a synthetic dialogue between a user and a tool-using AI assistant.
Score the dialogue from 1 (poor) to 5 (excellent) on four dimensions:
- Naturalness (NAT): do the user's messages read like a real person's?
- Coherence (COH): does each turn follow sensibly from the earlier ones?
- Helpfulness (HELP): does the assistant actually help the user reach their goals?
- Accuracy (ACC): are the tool calls correct for the documentation and the request, and are tool results reported faithfully?
Explain briefly, then end with exactly one line of the form:
NAT=<1-5> COH=<1-5> HELP=<1-5> ACC=<1-5>";

pub fn render_rubric_user(tools_json: &str, transcript: &str) -> String {
    format!("Tools:\n```json\n{tools_json}\n```\n\nDialogue:\n{transcript}")
}

pub const ENRICH_SYSTEM: &str = "You are completing missing documentation for an API tool.
Write a concise, accurate description for the requested field, inferred from the tool's name, its other fields and their descriptions.
Respond with only a JSON object {\"description\": \"...\"}.";

pub fn render_enrich(tool_json: &str, field: &str) -> String {
    format!("Tool:\n```json\n{tool_json}\n```\nField missing a description: {field}")
}

/// Extract the body of the first ```json fenced block.
pub fn fenced_json(text: &str) -> Option<&str> {
    let start = text.find("```json\n")? + "```json\n".len();
    let len = text[start..].find("\n```")?;
    Some(&text[start..start + len])
}
