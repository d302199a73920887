//! Evaluation harness for multi-answer question answering over an entity corpus.

pub mod corpus;
pub mod error;
mod http;
pub mod llm;
pub mod metrics;
pub mod prompts;
pub mod qa;
pub mod retrieval;
pub mod runner;
pub mod verification;

pub use error::{Error, Result};
