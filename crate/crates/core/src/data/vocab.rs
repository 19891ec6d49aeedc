use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{CLS, MASK, NUM_RESERVED, PAD, SEP, UNK};
use crate::error::{Error, Result};

pub const RESERVED_TOKENS: [&str; NUM_RESERVED] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];

/// Word-level vocabulary. Ids 0..5 are the reserved tokens; corpus words
/// follow in descending frequency, ties broken lexicographically.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Builds from whitespace-separated words. `max_size` counts the reserved tokens.
    pub fn build<'a, I>(lines: I, max_size: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut counts: HashMap<&str, u64> = HashMap::new();
        let mut saw_word = false;
        for line in lines {
            for w in line.split_whitespace() {
                saw_word = true;
                if !RESERVED_TOKENS.contains(&w) {
                    *counts.entry(w).or_default() += 1;
                }
            }
        }
        if !saw_word {
            return Err(Error::EmptyCorpus);
        }
        let mut ranked: Vec<(&str, u64)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let keep = max_size.saturating_sub(NUM_RESERVED);
        Ok(Self::from_words(
            ranked.into_iter().take(keep).map(|(w, _)| w.to_string()),
        ))
    }

    fn from_words(words: impl IntoIterator<Item = String>) -> Self {
        let tokens: Vec<String> = RESERVED_TOKENS
            .iter()
            .map(|s| s.to_string())
            .chain(words)
            .collect();
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Corpus words in id order (reserved tokens excluded).
    pub fn words(&self) -> &[String] {
        &self.tokens[NUM_RESERVED..]
    }

    /// `[CLS] words... [SEP]`, truncated to `seq_len` with the final `[SEP]`
    /// kept, then right-padded with `[PAD]`. Unknown words map to `[UNK]`.
    pub fn encode_line(&self, line: &str, seq_len: usize) -> Result<Vec<usize>> {
        if seq_len < 3 {
            return Err(Error::SeqLenTooShort(seq_len));
        }
        let mut ids = Vec::with_capacity(seq_len);
        ids.push(CLS);
        ids.extend(line.split_whitespace().take(seq_len - 2).map(|w| self.id(w)));
        ids.push(SEP);
        ids.resize(seq_len, PAD);
        Ok(ids)
    }

    /// One word per line; line `i` (0-based) holds id `i + 5`.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for w in self.words() {
            let _ = writeln!(s, "{w}");
        }
        s
    }

    pub fn from_file_string(text: &str) -> Result<Self> {
        let words: Vec<String> = text.lines().map(str::to_string).collect();
        let mut seen = std::collections::HashSet::new();
        for w in &words {
            if w.is_empty() || w.split_whitespace().count() != 1 || RESERVED_TOKENS.contains(&w.as_str()) {
                return Err(Error::InvalidRequest(format!("invalid vocab entry {w:?}")));
            }
            if !seen.insert(w) {
                return Err(Error::InvalidRequest(format!("duplicate vocab entry {w:?}")));
            }
        }
        Ok(Self::from_words(words))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_file_string())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_file_string(&std::fs::read_to_string(path)?)
    }
}

/// True for ids that may be selected for masking: anything but
/// `[PAD]`, `[CLS]`, `[SEP]` and `[MASK]`.
pub fn is_maskable(id: usize) -> bool {
    !matches!(id, PAD | CLS | SEP | MASK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frequency_order() {
        let v = Vocab::build(["a a b"], 100).unwrap();
        assert!(v.id("a") < v.id("b"));
        assert_eq!(v.id("a"), NUM_RESERVED);
    }

    #[test]
    fn size_cap_counts_reserved() {
        let v = Vocab::build(["a a b c"], 6).unwrap();
        assert_eq!(v.len(), 6);
        assert_eq!(v.words(), &["a".to_string()]);
    }

    #[test]
    fn lexicographic_tie_break() {
        let v = Vocab::build(["y x"], 100).unwrap();
        assert!(v.id("x") < v.id("y"));
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(matches!(Vocab::build(["", "  "], 10), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn reserved_ids_are_fixed() {
        let v = Vocab::build(["[MASK] hello"], 10).unwrap();
        assert_eq!(v.id("[PAD]"), 0);
        assert_eq!(v.id("[UNK]"), 1);
        assert_eq!(v.id("[CLS]"), 2);
        assert_eq!(v.id("[SEP]"), 3);
        assert_eq!(v.id("[MASK]"), 4);
        assert_eq!(v.len(), 6);
    }

    #[test]
    fn encode_examples() {
        let v = Vocab::build(["a b c"], 100).unwrap();
        assert_eq!(v.encode_line("", 5).unwrap(), vec![CLS, SEP, PAD, PAD, PAD]);
        let ids = v.encode_line("a b c a b c", 5).unwrap();
        assert_eq!(ids.len(), 5);
        assert_eq!(ids[0], CLS);
        assert_eq!(ids[4], SEP);
        assert_eq!(v.encode_line("a zzz", 4).unwrap(), vec![CLS, v.id("a"), UNK, SEP]);
        assert!(v.encode_line("a", 2).is_err());
    }

    #[test]
    fn file_round_trip() {
        let v = Vocab::build(["q w e r t y q"], 100).unwrap();
        let back = Vocab::from_file_string(&v.to_file_string()).unwrap();
        assert_eq!(back, v);
        assert_eq!(v.to_file_string().lines().next(), Some("q"));
    }
}
