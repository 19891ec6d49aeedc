use rand::seq::SliceRandom;

use super::masking::{apply_mlm_masking, MaskedRow, MaskingPolicy};
use super::{is_maskable, Vocab};
use crate::error::{Error, Result};
use crate::rng::{substream, Rng, RngState};
use crate::transformer::KeyBlock;

/// A batch of corrupted sequences, flattened row-major as `[batch x seq_len]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskedBatch {
    pub batch_size: usize,
    pub seq_len: usize,
    pub input_ids: Vec<usize>,
    pub labels: Vec<Option<usize>>,
    pub masked: Vec<bool>,
    pub pad: Vec<bool>,
}

impl MaskedBatch {
    pub fn from_rows(rows: &[MaskedRow]) -> Result<Self> {
        let seq_len = rows.first().map_or(0, |r| r.input_ids.len());
        let mut b = Self {
            batch_size: rows.len(),
            seq_len,
            input_ids: Vec::with_capacity(rows.len() * seq_len),
            labels: Vec::with_capacity(rows.len() * seq_len),
            masked: Vec::with_capacity(rows.len() * seq_len),
            pad: Vec::with_capacity(rows.len() * seq_len),
        };
        for r in rows {
            if r.input_ids.len() != seq_len {
                return Err(Error::ShapeMismatch {
                    op: "MaskedBatch::from_rows",
                    left: vec![seq_len],
                    right: vec![r.input_ids.len()],
                });
            }
            b.input_ids.extend_from_slice(&r.input_ids);
            b.labels.extend_from_slice(&r.labels);
            b.masked.extend_from_slice(&r.masked);
            b.pad.extend_from_slice(&r.pad);
        }
        Ok(b)
    }

    /// An uncorrupted batch (no masked positions), as used for finetuning.
    pub fn unmasked(sequences: &[Vec<usize>]) -> Result<Self> {
        let rows: Vec<MaskedRow> = sequences
            .iter()
            .map(|ids| MaskedRow {
                input_ids: ids.clone(),
                labels: vec![None; ids.len()],
                masked: vec![false; ids.len()],
                pad: ids.iter().map(|&i| i == super::PAD).collect(),
                categories: vec![None; ids.len()],
            })
            .collect();
        Self::from_rows(&rows)
    }

    /// Encoder key-block: selected positions and pads, per sequence.
    pub fn base_key_block(&self) -> Result<KeyBlock> {
        let blocked: Vec<bool> = self.masked.iter().zip(&self.pad).map(|(m, p)| *m || *p).collect();
        let kb = KeyBlock::new(blocked);
        kb.check(self.seq_len)?;
        Ok(kb)
    }

    pub fn label_ids(&self) -> Vec<usize> {
        self.labels.iter().map(|l| l.unwrap_or(0)).collect()
    }

    pub fn num_masked(&self) -> usize {
        self.masked.iter().filter(|&&m| m).count()
    }
}

/// Encodes corpus lines, dropping those without a single maskable token.
/// Returns the kept sequences and the number of skipped lines.
pub fn encode_corpus<'a, I>(lines: I, vocab: &Vocab, seq_len: usize) -> Result<(Vec<Vec<usize>>, usize)>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut kept = Vec::new();
    let mut skipped = 0;
    for line in lines {
        let ids = vocab.encode_line(line, seq_len)?;
        if ids.iter().any(|&id| is_maskable(id)) {
            kept.push(ids);
        } else {
            skipped += 1;
        }
    }
    Ok((kept, skipped))
}

/// Resumable position of a [`BatchStream`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamState {
    pub epoch: u64,
    pub cursor: u64,
    /// The data-order stream as it stood before shuffling the current epoch.
    pub data_at_epoch_start: RngState,
    pub masking: RngState,
}

/// Deterministic, endless stream of masked batches.
///
/// Epoch order: the `data` substream of the run seed shuffles the sequence
/// indices at the start of every epoch, continuing where the previous epoch's
/// shuffle left it. Corruption draws come from the `masking` substream in
/// delivery order. The trailing partial batch of an epoch is dropped.
pub struct BatchStream {
    sequences: Vec<Vec<usize>>,
    vocab_size: usize,
    batch_size: usize,
    policy: MaskingPolicy,
    data_rng: Rng,
    data_at_epoch_start: Rng,
    masking_rng: Rng,
    order: Vec<usize>,
    epoch: u64,
    cursor: usize,
}

impl BatchStream {
    pub fn new(
        sequences: Vec<Vec<usize>>,
        vocab_size: usize,
        batch_size: usize,
        policy: MaskingPolicy,
        seed: u64,
    ) -> Result<Self> {
        policy.validate()?;
        if batch_size == 0 || sequences.len() < batch_size {
            return Err(Error::CorpusTooSmall {
                lines: sequences.len(),
                batch: batch_size,
            });
        }
        let data_rng = substream(seed, "data");
        let mut s = Self {
            sequences,
            vocab_size,
            batch_size,
            policy,
            data_at_epoch_start: data_rng.clone(),
            data_rng,
            masking_rng: substream(seed, "masking"),
            order: Vec::new(),
            epoch: 0,
            cursor: 0,
        };
        s.shuffle();
        Ok(s)
    }

    fn shuffle(&mut self) {
        self.data_at_epoch_start = self.data_rng.clone();
        self.order = (0..self.sequences.len()).collect();
        self.order.shuffle(&mut self.data_rng);
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.sequences.len() / self.batch_size
    }

    pub fn state(&self) -> StreamState {
        StreamState {
            epoch: self.epoch,
            cursor: self.cursor as u64,
            data_at_epoch_start: RngState::capture(&self.data_at_epoch_start),
            masking: RngState::capture(&self.masking_rng),
        }
    }

    pub fn restore(&mut self, state: &StreamState) -> Result<()> {
        if state.cursor as usize > self.sequences.len() {
            return Err(Error::Checkpoint(format!(
                "data cursor {} beyond {} sequences",
                state.cursor,
                self.sequences.len()
            )));
        }
        self.data_rng = state.data_at_epoch_start.restore();
        self.shuffle();
        self.epoch = state.epoch;
        self.cursor = state.cursor as usize;
        self.masking_rng = state.masking.restore();
        Ok(())
    }

    pub fn next_batch(&mut self) -> Result<MaskedBatch> {
        if self.cursor + self.batch_size > self.order.len() {
            self.epoch += 1;
            self.cursor = 0;
            self.shuffle();
        }
        let mut rows = Vec::with_capacity(self.batch_size);
        for &idx in &self.order[self.cursor..self.cursor + self.batch_size] {
            rows.push(apply_mlm_masking(
                &self.sequences[idx],
                self.vocab_size,
                &self.policy,
                &mut self.masking_rng,
            )?);
        }
        self.cursor += self.batch_size;
        MaskedBatch::from_rows(&rows)
    }
}

impl Iterator for BatchStream {
    type Item = Result<MaskedBatch>;

    fn next(&mut self) -> Option<Self::Item> {
        Some(self.next_batch())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream(seed: u64) -> BatchStream {
        let lines: Vec<String> = (0..10)
            .map(|i| (0..12).map(|j| format!("w{}", (i * 7 + j * 3) % 20)).collect::<Vec<_>>().join(" "))
            .collect();
        let vocab = Vocab::build(lines.iter().map(String::as_str), 100).unwrap();
        let (seqs, skipped) = encode_corpus(lines.iter().map(String::as_str), &vocab, 16).unwrap();
        assert_eq!(skipped, 0);
        BatchStream::new(seqs, vocab.len(), 3, MaskingPolicy::default(), seed).unwrap()
    }

    #[test]
    fn same_seed_same_batches() {
        let a: Vec<_> = stream(4).take(9).map(Result::unwrap).collect();
        let b: Vec<_> = stream(4).take(9).map(Result::unwrap).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn different_seed_different_first_batch() {
        assert_ne!(stream(1).next_batch().unwrap(), stream(2).next_batch().unwrap());
    }

    #[test]
    fn epochs_reshuffle() {
        let mut s = stream(7);
        assert_eq!(s.batches_per_epoch(), 3);
        let first: Vec<usize> = s.order.clone();
        for _ in 0..4 {
            s.next_batch().unwrap();
        }
        assert_eq!(s.epoch(), 1);
        assert_ne!(s.order, first);
    }

    #[test]
    fn restore_continues_identically() {
        let mut s = stream(3);
        for _ in 0..5 {
            s.next_batch().unwrap();
        }
        let state = s.state();
        let expected: Vec<_> = (0..6).map(|_| s.next_batch().unwrap()).collect();
        let mut r = stream(99);
        r.restore(&state).unwrap();
        let got: Vec<_> = (0..6).map(|_| r.next_batch().unwrap()).collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn too_small_corpus_rejected() {
        let r = BatchStream::new(vec![vec![2, 5, 3]], 10, 2, MaskingPolicy::default(), 0);
        assert!(matches!(r, Err(Error::CorpusTooSmall { lines: 1, batch: 2 })));
    }

    #[test]
    fn lines_without_words_are_skipped() {
        let vocab = Vocab::build(["a b"], 10).unwrap();
        let (seqs, skipped) = encode_corpus(["a", "", "b a"], &vocab, 6).unwrap();
        assert_eq!((seqs.len(), skipped), (2, 1));
    }
}
