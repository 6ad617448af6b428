//! Dataset ingestion, vocabularies, batching and synthetic data.

pub mod batch;
pub mod cache;
pub mod example;
pub mod glove;
pub mod hotpot;
pub mod squad;
pub mod synth;
pub mod tokenize;
pub mod vocab;

pub use batch::{make_batches, Batch, BatchExample, BatchOptions, BatchStats};
pub use example::{AnswerType, Document, Example, GoldAnswer, Sentence};
pub use glove::{load_glove, GloveTable};
pub use hotpot::{load_hotpotqa, HotpotRecord};
pub use squad::load_squad;
pub use synth::synth_two_hop;
pub use tokenize::{tokenize, Token, TOKENIZER_VERSION};
pub use vocab::Vocab;

use serde::Serialize;

/// Counters collected while turning raw records into examples.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LoadStats {
    pub records: usize,
    pub answer_not_found: usize,
    pub dropped_facts: usize,
    pub snapped_offsets: usize,
    pub warnings: Vec<String>,
}

impl LoadStats {
    pub(crate) fn warn(&mut self, msg: String) {
        log::warn!("{msg}");
        self.warnings.push(msg);
    }

    pub fn warning_count(&self) -> usize {
        self.warnings.len()
    }
}
