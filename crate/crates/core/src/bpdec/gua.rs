//! Gradual unmasking attention: which originally-masked positions each
//! decoder layer may attend to.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Per-decoder-layer unmasking rates, e.g. `[(1, 0.5), (2, 1.0)]`.
///
/// Layer indices are 1-based and strictly increasing, rates are
/// non-decreasing fractions, and a non-empty schedule ends at rate 1.0.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct GuaSchedule {
    entries: Vec<(usize, f64)>,
}

impl GuaSchedule {
    pub fn new(entries: Vec<(usize, f64)>) -> Result<Self> {
        let mut prev: Option<(usize, f64)> = None;
        for &(layer, rate) in &entries {
            if layer == 0 {
                return Err(Error::InvalidSchedule("layer indices start at 1".into()));
            }
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::InvalidSchedule(format!(
                    "rate {rate} for layer {layer} outside [0, 1]"
                )));
            }
            if let Some((pl, pr)) = prev {
                if layer <= pl {
                    return Err(Error::InvalidSchedule(format!(
                        "layer {layer} does not follow layer {pl}"
                    )));
                }
                if rate < pr {
                    return Err(Error::InvalidSchedule(format!(
                        "rate {rate} at layer {layer} is below {pr} at layer {pl}"
                    )));
                }
            }
            prev = Some((layer, rate));
        }
        if let Some((layer, rate)) = prev {
            if rate != 1.0 {
                return Err(Error::InvalidSchedule(format!(
                    "final scheduled layer {layer} must unmask everything (rate 1.0), got {rate}"
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// The two-layer schedule of the base configs: half at layer 1, the rest at layer 2.
    pub fn half_then_all() -> Self {
        Self::new(vec![(1, 0.5), (2, 1.0)]).expect("valid")
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn layers(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.0).collect()
    }

    pub fn rates(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.1).collect()
    }

    pub fn validate_for(&self, decoder_layers: usize) -> Result<()> {
        match self.entries.last() {
            Some(&(layer, _)) if layer > decoder_layers => Err(Error::InvalidSchedule(format!(
                "layer {layer} scheduled but only {decoder_layers} decoder layers exist"
            ))),
            _ => Ok(()),
        }
    }

    /// Rate in force at 1-based decoder layer `layer`: the most recent
    /// scheduled rate at or before it, or `None` before the first entry.
    pub fn rate_at(&self, layer: usize) -> Option<f64> {
        self.entries
            .iter()
            .take_while(|(l, _)| *l <= layer)
            .last()
            .map(|&(_, r)| r)
    }
}

/// Number of positions revealed at rate `rate` out of `m`: `ceil(rate * m)`.
/// A 1e-9 slack absorbs binary representation error (0.3 * 10 is not exactly 3).
pub fn unmask_count(rate: f64, m: usize) -> usize {
    let raw = (rate * m as f64 - 1e-9).ceil();
    (raw.max(0.0) as usize).min(m)
}

/// For each decoder layer, the positions whose key-block is lifted.
///
/// Indexed `[layer][position]` over the flattened batch; `true` means the
/// originally-masked position is visible as a key at that layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UnmaskPlan {
    layers: Vec<Vec<bool>>,
}

impl UnmaskPlan {
    /// A plan that lifts nothing: every decoder layer keeps the encoder's blocking.
    pub fn none(decoder_layers: usize, positions: usize) -> Self {
        Self {
            layers: vec![vec![false; positions]; decoder_layers],
        }
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Unmask set of 0-based decoder layer `layer`.
    pub fn layer(&self, layer: usize) -> &[bool] {
        &self.layers[layer]
    }

    pub fn counts(&self) -> Vec<usize> {
        self.layers
            .iter()
            .map(|l| l.iter().filter(|&&b| b).count())
            .collect()
    }
}

/// Samples an unmasking plan for one or more sequences laid out back to back.
///
/// For every sequence of length `seq_len`, one uniform permutation of its
/// masked positions is drawn; a scheduled layer with rate `r` reveals the first
/// `ceil(r * m)` entries of that permutation, which makes the sets nested.
/// Unscheduled layers inherit the most recent scheduled set, and layers before
/// the first scheduled one reveal nothing.
pub fn plan_unmasking(
    masked: &[bool],
    seq_len: usize,
    schedule: &GuaSchedule,
    decoder_layers: usize,
    rng: &mut Rng,
) -> Result<UnmaskPlan> {
    schedule.validate_for(decoder_layers)?;
    if seq_len == 0 || !masked.len().is_multiple_of(seq_len) {
        return Err(Error::InvalidRequest(format!(
            "mask of length {} is not a whole number of sequences of length {seq_len}",
            masked.len()
        )));
    }
    let mut plan = UnmaskPlan::none(decoder_layers, masked.len());
    if schedule.is_empty() || decoder_layers == 0 {
        return Ok(plan);
    }
    for (s, chunk) in masked.chunks(seq_len).enumerate() {
        let mut order: Vec<usize> = chunk
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
            .collect();
        order.shuffle(rng);
        let m = order.len();
        for layer in 0..decoder_layers {
            let Some(rate) = schedule.rate_at(layer + 1) else { continue };
            for &pos in &order[..unmask_count(rate, m)] {
                plan.layers[layer][s * seq_len + pos] = true;
            }
        }
    }
    Ok(plan)
}
