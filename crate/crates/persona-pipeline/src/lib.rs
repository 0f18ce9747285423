//! Orchestration layer for the persona induction pipeline.
//!
//! Wraps the pure algorithms from `persona-core` with everything that touches
//! the outside world: configuration loading, JSONL file formats, the
//! OpenAI-compatible chat and embedding clients, request/response cassettes
//! for offline replay, the live judge, and the stage implementations behind
//! the `persona-pipeline` CLI.

pub mod cassette;
pub mod chat;
pub mod config;
pub mod embed_client;
pub mod formats;
pub mod judge_live;
pub mod prompts;
pub mod stages;
