//! Zero-shot named entity recognition with chat LLMs: decomposed
//! question answering, syntactic prompting, tool augmentation, and
//! self-consistency voting, plus scoring and error analysis.

pub mod answer;
pub mod consensus;
pub mod corpus;
pub mod gateway;
pub mod http;
pub mod orchestrator;
pub mod prompt;
pub mod pylit;
pub mod scoreboard;
pub mod syntax;
pub mod transcript;
