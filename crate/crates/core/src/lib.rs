//! Prompt-based long-context question answering over paginated documents.
//!
//! The crate covers the full experiment loop: building position-controlled
//! samples ([`corpus`]), rendering prompts with optional instruction reminders
//! ([`prompt`]), calling a model ([`llm`]), running the QA methods
//! ([`pipeline`]) and scoring the results ([`eval`]). Documents and token
//! counting live in [`docmodel`].

pub mod corpus;
pub mod docmodel;
pub mod eval;
pub mod llm;
pub mod pipeline;
pub mod prompt;
