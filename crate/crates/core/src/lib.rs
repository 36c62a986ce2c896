//! Synthesis of multi-turn tool-calling dialogues: a tool relevance graph
//! for sampling correlated tool subsets, plan generation, a three-agent
//! (user / assistant / tool) synthesis loop, rule-based filtering, corpus
//! quality metrics and train/test overlap checks.

pub mod canonical;
pub mod catalog;
pub mod dialogue;
pub mod embedding;
pub mod filter;
pub mod graph;
pub mod llm;
pub mod metrics;
pub mod mock;
pub mod overlap;
pub mod pipeline;
pub mod planner;
pub mod prompts;
pub mod seeds;
pub mod synth;
pub mod text;
