//! Whitespace tokenization, the line-delimited dataset format, and the
//! synthetic generator.

mod dataset;
mod synth;
mod vocab;

use thiserror::Error;

pub use dataset::{read_dataset, write_dataset, BehaviorRecord, Sample};
pub use synth::{behavior_text, synth_dataset, SynthParams};
pub use vocab::{Vocab, BOS, PAD, SEP, SINK, UNK};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("line {line}: malformed record: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: schema violation: {message}")]
    Schema { line: usize, message: String },
    #[error("invalid generator parameters: {0}")]
    InvalidParams(String),
    #[error("i/o: {0}")]
    Io(String),
}
