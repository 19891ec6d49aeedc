use std::fmt::Write as _;

use super::masking::{apply_mlm_masking, MaskingPolicy, Replacement};
use super::is_maskable;
use crate::error::{Error, Result};
use crate::rng::substream;

/// Empirical selection and replacement rates of the masking policy.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskStatsReport {
    pub seed: u64,
    pub sequences: usize,
    pub maskable_tokens: usize,
    pub selected: usize,
    pub mask: usize,
    pub keep: usize,
    pub random: usize,
    pub policy: MaskingPolicy,
}

/// Binomial standard error of a proportion.
fn stderr(p: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        (p * (1.0 - p) / n as f64).sqrt()
    }
}

impl MaskStatsReport {
    pub fn select_rate(&self) -> f64 {
        self.selected as f64 / self.maskable_tokens as f64
    }

    fn frac(&self, n: usize) -> f64 {
        n as f64 / self.selected as f64
    }

    pub fn mask_rate(&self) -> f64 {
        self.frac(self.mask)
    }

    pub fn keep_rate(&self) -> f64 {
        self.frac(self.keep)
    }

    pub fn random_rate(&self) -> f64 {
        self.frac(self.random)
    }

    /// Newline-delimited `key=value` records.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv("seed", self.seed.to_string());
        kv("sequences", self.sequences.to_string());
        kv("maskable_tokens", self.maskable_tokens.to_string());
        kv("selected", self.selected.to_string());
        let sel = self.select_rate();
        kv("select_rate", format!("{sel:.6}"));
        kv("select_rate_target", format!("{}", self.policy.select_rate));
        // exact-count selection makes the per-sequence count deterministic, so
        // this binomial figure is an upper bound on the sampling spread
        kv("select_rate_stderr", format!("{:.6}", stderr(sel, self.maskable_tokens)));
        for (name, count, target) in [
            ("mask", self.mask, self.policy.mask_frac),
            ("keep", self.keep, self.policy.keep_frac),
            ("random", self.random, self.policy.random_frac),
        ] {
            let p = self.frac(count);
            kv(&format!("{name}_count"), count.to_string());
            kv(&format!("{name}_rate"), format!("{p:.6}"));
            kv(&format!("{name}_rate_target"), format!("{target}"));
            kv(&format!("{name}_rate_stderr"), format!("{:.6}", stderr(p, self.selected)));
        }
        s
    }
}

/// Applies the masking policy to `sequences` (cycling if needed) until at
/// least `n_tokens` maskable tokens were processed, and tallies the outcome.
/// Draws come from the `masking` substream of `seed`.
pub fn mask_stats(
    sequences: &[Vec<usize>],
    vocab_size: usize,
    policy: &MaskingPolicy,
    seed: u64,
    n_tokens: usize,
) -> Result<MaskStatsReport> {
    policy.validate()?;
    if n_tokens < 10_000 {
        return Err(Error::InvalidRequest(format!(
            "mask statistics need at least 10000 tokens, got {n_tokens}"
        )));
    }
    if !sequences.iter().any(|s| s.iter().any(|&id| is_maskable(id))) {
        return Err(Error::NoMaskableTokens);
    }
    let mut rng = substream(seed, "masking");
    let mut report = MaskStatsReport {
        seed,
        sequences: 0,
        maskable_tokens: 0,
        selected: 0,
        mask: 0,
        keep: 0,
        random: 0,
        policy: *policy,
    };
    for ids in sequences.iter().cycle() {
        if report.maskable_tokens >= n_tokens {
            break;
        }
        let row = match apply_mlm_masking(ids, vocab_size, policy, &mut rng) {
            Ok(row) => row,
            Err(Error::NoMaskableTokens) => continue,
            Err(e) => return Err(e),
        };
        report.sequences += 1;
        report.maskable_tokens += ids.iter().filter(|&&id| is_maskable(id)).count();
        for c in row.categories.iter().flatten() {
            report.selected += 1;
            match c {
                Replacement::Mask => report.mask += 1,
                Replacement::Keep => report.keep += 1,
                Replacement::Random => report.random += 1,
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{CLS, SEP};

    fn corpus() -> Vec<Vec<usize>> {
        // 20 maskable tokens per sequence -> exactly 3 selected each
        (0..50)
            .map(|i| {
                let mut v = vec![CLS];
                v.extend((0..20).map(|j| 5 + (i + j) % 30));
                v.push(SEP);
                v
            })
            .collect()
    }

    #[test]
    fn degenerate_policy_selects_everything() {
        let policy = MaskingPolicy {
            select_rate: 1.0,
            ..MaskingPolicy::default()
        };
        let r = mask_stats(&corpus(), 40, &policy, 1, 10_000).unwrap();
        assert_eq!(r.selected, r.maskable_tokens);
    }

    #[test]
    fn report_is_key_value() {
        let r = mask_stats(&corpus(), 40, &MaskingPolicy::default(), 1, 10_000).unwrap();
        assert!((r.select_rate() - 0.15).abs() < 1e-12);
        let text = r.to_text();
        assert!(text.lines().all(|l| l.split_once('=').is_some()));
        assert!(text.contains("select_rate=0.150000"));
    }

    #[test]
    fn too_few_tokens_rejected() {
        assert!(mask_stats(&corpus(), 40, &MaskingPolicy::default(), 1, 100).is_err());
    }
}
