//! Tool-using LLM agent for question answering over multi-table EHR data.
//!
//! The agent receives a question, writes a plan as code that calls the
//! [`toolkit`] functions, runs it in a sandbox process through the
//! [`executor`] bridge, and iterates on error traces (optionally with a
//! separate [`debugger`] diagnosis) until it emits `TERMINATE` or the step
//! budget runs out. [`eval`] scores whole datasets.

pub mod ehr_store;
pub mod toolkit;
pub mod llm;
pub mod memory;
pub mod executor;
pub mod minipy;
pub mod knowledge;
pub mod debugger;
pub mod orchestrator;
pub mod eval;
pub mod config;
pub mod cli;
