//! Restricted-corpus word embeddings and a question/answer-only multiple-choice
//! model, with tooling to measure and remove the language bias it exploits.

pub mod bias;
pub mod cli;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod finetune;
pub mod qamodel;
pub mod synth;

pub use error::{Error, Result};
