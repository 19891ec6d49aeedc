//! Corpus ingestion, word-level vocabulary, MLM corruption and batching.
//!
//! Corpus files are UTF-8 text, one training sequence per line.

mod batch;
mod masking;
mod stats;
pub mod synthetic;
mod vocab;

pub use batch::{encode_corpus, BatchStream, MaskedBatch, StreamState};
pub use masking::{apply_mlm_masking, make_base_key_block, MaskedRow, MaskingPolicy, Replacement};
pub use stats::{mask_stats, MaskStatsReport};
pub use vocab::{is_maskable, Vocab, RESERVED_TOKENS};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
pub const SEP: usize = 3;
pub const MASK: usize = 4;
pub const NUM_RESERVED: usize = 5;

/// Reads a corpus file: one sequence per line, blank lines dropped.
pub fn read_corpus(path: impl AsRef<std::path::Path>) -> crate::Result<Vec<String>> {
    let text = std::fs::read_to_string(path)?;
    Ok(text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(str::to_string)
        .collect())
}
