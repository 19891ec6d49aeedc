use rand::seq::index::sample;
use rand::Rng as _;

use super::{is_maskable, MASK, NUM_RESERVED, PAD};
use crate::transformer::KeyBlock;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// BERT corruption policy: select a fraction of maskable tokens, then replace
/// each selected token with `[MASK]`, keep it, or swap in a random word.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskingPolicy {
    pub select_rate: f64,
    pub mask_frac: f64,
    pub keep_frac: f64,
    pub random_frac: f64,
}

impl Default for MaskingPolicy {
    fn default() -> Self {
        Self {
            select_rate: 0.15,
            mask_frac: 0.8,
            keep_frac: 0.1,
            random_frac: 0.1,
        }
    }
}

impl MaskingPolicy {
    pub fn validate(&self) -> Result<()> {
        let fracs = [self.mask_frac, self.keep_frac, self.random_frac];
        if !(0.0..=1.0).contains(&self.select_rate) || fracs.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::InvalidPolicy("rates must lie in [0, 1]".into()));
        }
        let total: f64 = fracs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidPolicy(format!(
                "mask + keep + random fractions sum to {total}, not 1"
            )));
        }
        Ok(())
    }

    /// Exact number of positions selected out of `n_maskable`: `max(1, round(rate * n))`.
    pub fn select_count(&self, n_maskable: usize) -> usize {
        if n_maskable == 0 {
            return 0;
        }
        ((self.select_rate * n_maskable as f64).round() as usize).clamp(1, n_maskable)
    }

    fn draw_category(&self, rng: &mut Rng) -> Replacement {
        let u: f64 = rng.random();
        if u < self.mask_frac {
            Replacement::Mask
        } else if u < self.mask_frac + self.keep_frac {
            Replacement::Keep
        } else {
            Replacement::Random
        }
    }
}

/// What a selected position was replaced with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Replacement {
    Mask,
    Keep,
    Random,
}

/// One corrupted sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskedRow {
    pub input_ids: Vec<usize>,
    /// Original id at selected positions, `None` elsewhere.
    pub labels: Vec<Option<usize>>,
    pub masked: Vec<bool>,
    pub pad: Vec<bool>,
    pub categories: Vec<Option<Replacement>>,
}

/// Corrupts one encoded sequence.
///
/// Selects exactly [`MaskingPolicy::select_count`] maskable positions uniformly
/// without replacement, then draws each selected position's replacement
/// category independently, in ascending position order. Random replacements
/// are uniform over the non-reserved ids `5..vocab_size`.
pub fn apply_mlm_masking(
    ids: &[usize],
    vocab_size: usize,
    policy: &MaskingPolicy,
    rng: &mut Rng,
) -> Result<MaskedRow> {
    let candidates: Vec<usize> = ids
        .iter()
        .enumerate()
        .filter_map(|(i, &id)| is_maskable(id).then_some(i))
        .collect();
    if candidates.is_empty() {
        return Err(Error::NoMaskableTokens);
    }
    if vocab_size <= NUM_RESERVED {
        return Err(Error::InvalidPolicy(format!(
            "vocab_size {vocab_size} has no non-reserved ids to draw from"
        )));
    }
    let k = policy.select_count(candidates.len());
    let mut picked: Vec<usize> = sample(rng, candidates.len(), k)
        .into_iter()
        .map(|j| candidates[j])
        .collect();
    picked.sort_unstable();

    let n = ids.len();
    let mut row = MaskedRow {
        input_ids: ids.to_vec(),
        labels: vec![None; n],
        masked: vec![false; n],
        pad: ids.iter().map(|&id| id == PAD).collect(),
        categories: vec![None; n],
    };
    for pos in picked {
        let category = policy.draw_category(rng);
        row.labels[pos] = Some(ids[pos]);
        row.masked[pos] = true;
        row.categories[pos] = Some(category);
        row.input_ids[pos] = match category {
            Replacement::Mask => MASK,
            Replacement::Keep => ids[pos],
            Replacement::Random => rng.random_range(NUM_RESERVED..vocab_size),
        };
    }
    Ok(row)
}

/// Positions blocked as attention keys in the encoder: every selected
/// position (whatever its replacement) and every pad.
pub fn make_base_key_block(masked: &[bool], pad: &[bool]) -> Result<KeyBlock> {
    if masked.len() != pad.len() {
        return Err(Error::ShapeMismatch {
            op: "make_base_key_block",
            left: vec![masked.len()],
            right: vec![pad.len()],
        });
    }
    let blocked: Vec<bool> = masked.iter().zip(pad).map(|(m, p)| *m || *p).collect();
    if blocked.iter().all(|&b| b) {
        return Err(Error::AllKeysBlocked { sequence: 0 });
    }
    Ok(KeyBlock::new(blocked))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{CLS, SEP};
    use crate::rng::substream;

    fn seq(n_words: usize, pad: usize) -> Vec<usize> {
        let mut ids = vec![CLS];
        ids.extend((0..n_words).map(|i| NUM_RESERVED + i % 20));
        ids.push(SEP);
        ids.extend(std::iter::repeat_n(PAD, pad));
        ids
    }

    #[test]
    fn twenty_maskable_selects_three() {
        let mut rng = substream(1, "masking");
        let row = apply_mlm_masking(&seq(20, 4), 50, &MaskingPolicy::default(), &mut rng).unwrap();
        assert_eq!(row.masked.iter().filter(|&&m| m).count(), 3);
    }

    #[test]
    fn short_sequence_selects_at_least_one() {
        let mut rng = substream(1, "masking");
        let row = apply_mlm_masking(&seq(2, 0), 50, &MaskingPolicy::default(), &mut rng).unwrap();
        assert_eq!(row.masked.iter().filter(|&&m| m).count(), 1);
    }

    #[test]
    fn no_maskable_tokens_signalled() {
        let mut rng = substream(1, "masking");
        let r = apply_mlm_masking(&[CLS, SEP, PAD], 50, &MaskingPolicy::default(), &mut rng);
        assert!(matches!(r, Err(Error::NoMaskableTokens)));
    }

    #[test]
    fn round_trip_and_exclusions() {
        let mut rng = substream(5, "masking");
        let ids = seq(17, 6);
        for _ in 0..2000 {
            let row = apply_mlm_masking(&ids, 40, &MaskingPolicy::default(), &mut rng).unwrap();
            for i in 0..ids.len() {
                if row.masked[i] {
                    assert_eq!(row.labels[i], Some(ids[i]));
                    assert!(is_maskable(ids[i]));
                    assert!(!row.pad[i]);
                } else {
                    assert_eq!(row.input_ids[i], ids[i]);
                    assert_eq!(row.labels[i], None);
                }
                if row.categories[i] == Some(Replacement::Random) {
                    assert!(row.input_ids[i] >= NUM_RESERVED);
                }
            }
        }
    }

    #[test]
    fn policy_fractions_must_sum_to_one() {
        let p = MaskingPolicy {
            keep_frac: 0.2,
            ..MaskingPolicy::default()
        };
        assert!(p.validate().is_err());
        assert!(MaskingPolicy::default().validate().is_ok());
    }

    #[test]
    fn key_block_union() {
        let n = 8;
        let none = make_base_key_block(&vec![false; n], &vec![false; n]).unwrap();
        assert!(none.blocked().iter().all(|&b| !b));
        let mut masked = vec![false; n];
        masked[2] = true;
        masked[5] = true;
        let mut pad = vec![false; n];
        pad[7] = true;
        let kb = make_base_key_block(&masked, &pad).unwrap();
        let blocked: Vec<usize> = (0..n).filter(|&i| kb.blocked()[i]).collect();
        assert_eq!(blocked, vec![2, 5, 7]);
        assert!(make_base_key_block(&[true, false], &[false, true]).is_err());
    }

    #[test]
    fn every_replacement_category_is_blocked() {
        let mut rng = substream(2, "masking");
        let ids = seq(20, 0);
        let mut seen = std::collections::HashSet::new();
        for _ in 0..500 {
            let row = apply_mlm_masking(&ids, 40, &MaskingPolicy::default(), &mut rng).unwrap();
            let kb = make_base_key_block(&row.masked, &row.pad).unwrap();
            for i in 0..ids.len() {
                if let Some(c) = row.categories[i] {
                    seen.insert(c);
                    assert!(kb.blocked()[i], "{c:?} position {i} not blocked");
                }
            }
        }
        assert_eq!(seen.len(), 3);
    }
}
