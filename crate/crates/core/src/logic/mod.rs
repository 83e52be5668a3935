//! Propositional-logic inference task over six variables.

mod dataset;
mod relation;
mod sentence;

use thiserror::Error;

pub use dataset::{
    build_logic_dataset, label_counts, load_logic_dataset, pair_batch, save_logic_dataset, LogicDataset, LogicExample,
    LogicSizes,
};
pub use relation::{classify_relation, Relation, UNIVERSE};
pub use sentence::{generate_sentence, parse, Sentence, Token, NUM_VARS, PAD, VOCAB_SIZE};

#[derive(Debug, Error)]
pub enum LogicError {
    #[error("parse error at token {position}: {message}")]
    Parse { position: usize, message: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("malformed header: {0}")]
    Header(String),
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("line {line}: stored label {stored} but the sentences stand in relation {actual}")]
    LabelMismatch {
        line: usize,
        stored: Relation,
        actual: Relation,
    },
    #[error("invalid sizes: {0}")]
    Sizes(String),
}
