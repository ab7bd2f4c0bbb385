//! Benchmark harness for financial news sentiment prompting.

pub mod corpus;
pub mod prompt_forge;
pub mod verdict;
pub mod evalkit;
pub mod gateway;
pub mod harness;
