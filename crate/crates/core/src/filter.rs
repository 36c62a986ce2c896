//! Rule-based quality gate over synthesized dialogues.
//!
//! | rule | drops a dialogue when                                              |
//! |------|--------------------------------------------------------------------|
//! | R0   | the record does not parse as a dialogue                            |
//! | R1   | a tool call's arguments are not a JSON object or it names a tool   |
//! |      | outside the dialogue's subset                                      |
//! | R2   | a tool call misses a required parameter or a value has the wrong   |
//! |      | type                                                               |
//! | R3   | the dialogue status is not `complete`                              |
//! | R4   | no assistant message carries a tool call                           |
//! | R5   | a user, tool or plain assistant message has empty content          |
//! | R6   | the transcript breaks the role grammar                             |

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dialogue::{check_role_grammar, Dialogue, DialogueStatus};
use crate::llm::Role;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Rule {
    R0,
    R1,
    R2,
    R3,
    R4,
    R5,
    R6,
}

impl Rule {
    pub const CHECKS: [Rule; 6] = [Rule::R1, Rule::R2, Rule::R3, Rule::R4, Rule::R5, Rule::R6];
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Rule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.trim().to_ascii_uppercase().as_str() {
            "R0" => Rule::R0,
            "R1" => Rule::R1,
            "R2" => Rule::R2,
            "R3" => Rule::R3,
            "R4" => Rule::R4,
            "R5" => Rule::R5,
            "R6" => Rule::R6,
            other => return Err(format!("unknown filter rule `{other}`")),
        })
    }
}

/// The enabled rules. R0 is always applied to raw records.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleSet {
    enabled: BTreeSet<Rule>,
}

impl Default for RuleSet {
    fn default() -> Self {
        RuleSet {
            enabled: Rule::CHECKS.into_iter().collect(),
        }
    }
}

impl RuleSet {
    pub fn none() -> Self {
        RuleSet {
            enabled: BTreeSet::new(),
        }
    }

    pub fn without(mut self, rule: Rule) -> Self {
        self.enabled.remove(&rule);
        self
    }

    pub fn with(mut self, rule: Rule) -> Self {
        if rule != Rule::R0 {
            self.enabled.insert(rule);
        }
        self
    }

    pub fn is_enabled(&self, rule: Rule) -> bool {
        self.enabled.contains(&rule)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub id: String,
    pub kept: bool,
    /// Failed rules with a short reason each.
    pub reasons: Vec<(Rule, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FilterReport {
    pub kept: usize,
    pub dropped: usize,
    /// Dialogues dropped per rule; a dialogue failing two rules counts
    /// under both.
    pub reasons: BTreeMap<Rule, usize>,
    pub verdicts: Vec<Verdict>,
}

impl FilterReport {
    pub fn record(&mut self, verdict: Verdict) {
        if verdict.kept {
            self.kept += 1;
        } else {
            self.dropped += 1;
            let rules: BTreeSet<Rule> = verdict.reasons.iter().map(|(r, _)| *r).collect();
            for r in rules {
                *self.reasons.entry(r).or_default() += 1;
            }
        }
        self.verdicts.push(verdict);
    }

    pub fn to_json(&self) -> String {
        crate::canonical::to_canonical_string(self).expect("report serializes")
    }
}

fn check_calls(d: &Dialogue, rules: &RuleSet, out: &mut Vec<(Rule, String)>) {
    for (idx, m) in d.messages.iter().enumerate() {
        for call in &m.tool_calls {
            let args = match call.parsed_arguments() {
                Ok(a) => a,
                Err(e) => {
                    if rules.is_enabled(Rule::R1) {
                        out.push((Rule::R1, format!("message {idx}: {e}")));
                    }
                    continue;
                }
            };
            let Some(spec) = d.tool(&call.name) else {
                if rules.is_enabled(Rule::R1) {
                    out.push((Rule::R1, format!("message {idx}: tool `{}` is not in the subset", call.name)));
                }
                continue;
            };
            if !rules.is_enabled(Rule::R2) {
                continue;
            }
            for p in spec.required_parameters() {
                if !args.contains_key(&p.name) {
                    out.push((Rule::R2, format!("message {idx}: `{}` misses required `{}`", call.name, p.name)));
                }
            }
            for (k, v) in &args {
                if let Some(p) = spec.parameter(k) {
                    if !p.value_type.accepts(v) {
                        out.push((
                            Rule::R2,
                            format!("message {idx}: `{}.{k}` should be {}, got {v}", call.name, p.value_type),
                        ));
                    }
                }
            }
        }
    }
}

/// Every enabled rule `d` fails, with reasons.
pub fn check_dialogue(d: &Dialogue, rules: &RuleSet) -> Vec<(Rule, String)> {
    let mut out = Vec::new();
    check_calls(d, rules, &mut out);
    if rules.is_enabled(Rule::R3) && d.status != DialogueStatus::Complete {
        out.push((Rule::R3, format!("status is {:?}", d.status)));
    }
    if rules.is_enabled(Rule::R4) && !d.messages.iter().any(|m| m.role == Role::Assistant && m.has_tool_calls()) {
        out.push((Rule::R4, "no tool-call turn".into()));
    }
    if rules.is_enabled(Rule::R5) {
        if let Some(idx) = d
            .messages
            .iter()
            .position(|m| m.content.trim().is_empty() && !(m.role == Role::Assistant && m.has_tool_calls()))
        {
            out.push((Rule::R5, format!("message {idx} is empty")));
        }
    }
    if rules.is_enabled(Rule::R6) {
        if let Err(e) = check_role_grammar(&d.messages) {
            out.push((Rule::R6, e));
        }
    }
    // R1/R2 may fire once per call; report each rule once per dialogue.
    let mut seen = BTreeSet::new();
    out.retain(|(r, _)| seen.insert(*r));
    out
}

pub fn verdict(d: &Dialogue, rules: &RuleSet) -> Verdict {
    let reasons = check_dialogue(d, rules);
    Verdict {
        id: d.id.clone(),
        kept: reasons.is_empty(),
        reasons,
    }
}

/// Keep the dialogues that pass every enabled rule, in input order.
pub fn filter_dialogues(dialogues: &[Dialogue], rules: &RuleSet) -> (Vec<Dialogue>, FilterReport) {
    let mut report = FilterReport::default();
    let mut kept = Vec::new();
    for d in dialogues {
        let v = verdict(d, rules);
        if v.kept {
            kept.push(d.clone());
        }
        report.record(v);
    }
    (kept, report)
}

/// Filter raw JSONL lines. Lines that do not parse are dropped under R0.
/// Returns the kept lines verbatim.
pub fn filter_lines<'a>(lines: impl IntoIterator<Item = &'a str>, rules: &RuleSet) -> (Vec<&'a str>, FilterReport) {
    let mut report = FilterReport::default();
    let mut kept = Vec::new();
    for (n, line) in lines.into_iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Dialogue>(line) {
            Ok(d) => {
                let v = verdict(&d, rules);
                if v.kept {
                    kept.push(line);
                }
                report.record(v);
            }
            Err(e) => report.record(Verdict {
                id: format!("line {}", n + 1),
                kept: false,
                reasons: vec![(Rule::R0, e.to_string())],
            }),
        }
    }
    (kept, report)
}
