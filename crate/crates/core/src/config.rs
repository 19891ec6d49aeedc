//! Model and training configuration, and the plain-text config format.
//!
//! The format is one `key = value` per line, `#` starts a comment, lists are
//! comma separated:
//!
//! ```text
//! encoder_layers = 12
//! hidden = 256
//! ffn = 1024
//! heads = 4
//! head_size = 64
//! decoder_layers = 2
//! gua_layers = 1,2
//! gua_rates = 0.5,1.0
//! mix_decoder_prob = 0.8
//! ```
//!
//! `encoder_layers`, `hidden`, `ffn`, `heads` and `head_size` are required;
//! every other key has a default. Unknown or repeated keys are rejected.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::bpdec::GuaSchedule;
use crate::error::{Error, Result};
use crate::tensor::DType;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum LnPlacement {
    /// LayerNorm after each residual add (original BERT).
    #[default]
    Post,
    /// LayerNorm before each sublayer, plus a final LayerNorm after the stack.
    Pre,
}

impl LnPlacement {
    pub fn name(self) -> &'static str {
        match self {
            LnPlacement::Post => "post",
            LnPlacement::Pre => "pre",
        }
    }
}

impl FromStr for LnPlacement {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "post" => Ok(LnPlacement::Post),
            "pre" => Ok(LnPlacement::Pre),
            other => Err(format!("expected post or pre, got {other:?}")),
        }
    }
}

/// Architecture of the encoder, the pretraining decoder and the MLM head.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub encoder_layers: usize,
    pub hidden: usize,
    pub ffn_inner: usize,
    pub heads: usize,
    pub head_size: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub ln_placement: LnPlacement,
    pub decoder_layers: usize,
    pub gua_schedule: GuaSchedule,
    pub mix_decoder_prob: f64,
    pub layer_norm_eps: f64,
    pub hidden_dropout: f64,
    pub attn_dropout: f64,
    pub init_std: f64,
    pub precision: DType,
}

impl ModelConfig {
    fn arch(
        encoder_layers: usize,
        hidden: usize,
        ffn_inner: usize,
        heads: usize,
        decoder_layers: usize,
        gua_schedule: GuaSchedule,
    ) -> Self {
        Self {
            encoder_layers,
            hidden,
            ffn_inner,
            heads,
            head_size: hidden / heads,
            vocab_size: 30522,
            max_seq_len: 512,
            ln_placement: LnPlacement::Post,
            decoder_layers,
            gua_schedule,
            mix_decoder_prob: 0.8,
            layer_norm_eps: 1e-12,
            hidden_dropout: 0.0,
            attn_dropout: 0.0,
            init_std: 0.02,
            precision: DType::F32,
        }
    }

    /// base-h256: 12 x 256 encoder, 4 heads, FFN 1024, 2 decoder layers.
    pub fn base_h256() -> Self {
        Self::arch(12, 256, 1024, 4, 2, GuaSchedule::half_then_all())
    }

    /// base: 12 x 768 encoder, 12 heads, FFN 3072, 2 decoder layers.
    pub fn base() -> Self {
        Self::arch(12, 768, 3072, 12, 2, GuaSchedule::half_then_all())
    }

    /// large: 24 x 1024 encoder, 16 heads, FFN 4096, 4 decoder layers unmasking at [1, 3].
    pub fn large() -> Self {
        let schedule = GuaSchedule::new(vec![(1, 0.5), (3, 1.0)]).expect("valid");
        Self::arch(24, 1024, 4096, 16, 4, schedule)
    }

    /// Trainable-in-minutes shape: 4 x 64 encoder, 2 heads, FFN 256, 1 decoder layer.
    pub fn desk() -> Self {
        Self {
            vocab_size: 69,
            max_seq_len: 32,
            ..Self::arch(4, 64, 256, 2, 1, GuaSchedule::new(vec![(1, 1.0)]).expect("valid"))
        }
    }

    /// Gradient-check shape: 2 encoder + 1 decoder layer, h = 16, V = 32, 64-bit.
    pub fn tiny() -> Self {
        Self {
            vocab_size: 32,
            max_seq_len: 8,
            precision: DType::F64,
            ..Self::arch(2, 16, 32, 2, 1, GuaSchedule::new(vec![(1, 1.0)]).expect("valid"))
        }
    }

    /// Same encoder with the decoder, schedule and mixing removed.
    pub fn encoder_only(&self) -> Self {
        Self {
            decoder_layers: 0,
            gua_schedule: GuaSchedule::empty(),
            mix_decoder_prob: 0.0,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.heads == 0 || self.head_size == 0 {
            return bad("heads and head_size must be positive".into());
        }
        if self.heads * self.head_size != self.hidden {
            return bad(format!(
                "heads x head_size = {} x {} must equal hidden = {}",
                self.heads, self.head_size, self.hidden
            ));
        }
        if self.hidden < 2 || self.ffn_inner == 0 {
            return bad("hidden must be >= 2 and ffn positive".into());
        }
        if self.vocab_size <= crate::data::NUM_RESERVED {
            return bad(format!(
                "vocab_size {} leaves no room beyond the {} reserved tokens",
                self.vocab_size,
                crate::data::NUM_RESERVED
            ));
        }
        if self.max_seq_len < 3 {
            return bad("max_seq_len must be at least 3".into());
        }
        self.gua_schedule.validate_for(self.decoder_layers)?;
        if !(0.0..=1.0).contains(&self.mix_decoder_prob) {
            return Err(Error::InvalidMixProb(self.mix_decoder_prob));
        }
        if !(self.layer_norm_eps > 0.0) {
            return bad("layer_norm_eps must be positive".into());
        }
        for (k, v) in [("hidden_dropout", self.hidden_dropout), ("attn_dropout", self.attn_dropout)] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{k} must lie in [0, 1), got {v}"));
            }
        }
        if !(self.init_std > 0.0) {
            return bad("init_std must be positive".into());
        }
        Ok(())
    }
}

/// Optimizer and loop settings.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    /// Sequence length of training batches (at most `max_seq_len`).
    pub seq_len: usize,
    pub learning_rate: f64,
    /// Fraction of `steps` spent in linear warmup before linear decay to zero.
    pub warmup_frac: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    /// Write an intermediate checkpoint every this many steps (0: final only).
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 8,
            seq_len: 32,
            learning_rate: 1e-3,
            warmup_frac: 0.1,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-6,
            weight_decay: 0.0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, model: &ModelConfig) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.seq_len < 3 || self.seq_len > model.max_seq_len {
            return bad(format!(
                "seq_len {} must lie in [3, max_seq_len = {}]",
                self.seq_len, model.max_seq_len
            ));
        }
        if !(self.learning_rate > 0.0) || !(0.0..=1.0).contains(&self.warmup_frac) {
            return bad("learning_rate must be positive and warmup_frac in [0, 1]".into());
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must lie in [0, 1)".into());
        }
        if !(self.adam_eps > 0.0) || self.weight_decay < 0.0 {
            return bad("adam_eps must be positive and weight_decay non-negative".into());
        }
        Ok(())
    }
}

/// A parsed config file.
#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

const REQUIRED: [&str; 5] = ["encoder_layers", "hidden", "ffn", "heads", "head_size"];

const KNOWN: [&str; 27] = [
    "encoder_layers",
    "hidden",
    "ffn",
    "heads",
    "head_size",
    "vocab_size",
    "max_seq_len",
    "ln_placement",
    "decoder_layers",
    "gua_layers",
    "gua_rates",
    "mix_decoder_prob",
    "layer_norm_eps",
    "hidden_dropout",
    "attn_dropout",
    "init_std",
    "precision",
    "steps",
    "batch_size",
    "seq_len",
    "learning_rate",
    "warmup_frac",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "weight_decay",
    "checkpoint_every",
];

struct Entry {
    line: usize,
    value: String,
}

fn parse_value<T: FromStr>(key: &str, e: &Entry) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    e.value.parse::<T>().map_err(|err| Error::Config {
        line: e.line,
        key: key.to_string(),
        message: format!("cannot parse {:?}: {err}", e.value),
    })
}

fn parse_list<T: FromStr>(key: &str, e: &Entry) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    if e.value.trim().is_empty() {
        return Ok(Vec::new());
    }
    e.value
        .split(',')
        .map(|item| {
            item.trim().parse::<T>().map_err(|err| Error::Config {
                line: e.line,
                key: key.to_string(),
                message: format!("cannot parse list item {:?}: {err}", item.trim()),
            })
        })
        .collect()
}

impl Config {
    /// `model` with default training settings, `seq_len` capped at `max_seq_len`.
    pub fn for_model(model: ModelConfig) -> Self {
        let train = TrainConfig {
            seq_len: TrainConfig::default().seq_len.min(model.max_seq_len),
            ..Default::default()
        };
        Self { model, train }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: std::collections::HashMap<String, Entry> = Default::default();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config {
                    line: line_no,
                    key: line.to_string(),
                    message: "expected `key = value`".into(),
                });
            };
            let key = key.trim();
            if !KNOWN.contains(&key) {
                return Err(Error::Config {
                    line: line_no,
                    key: key.to_string(),
                    message: "unknown key".into(),
                });
            }
            if let Some(prev) = entries.get(key) {
                return Err(Error::Config {
                    line: line_no,
                    key: key.to_string(),
                    message: format!("repeated key (first set on line {})", prev.line),
                });
            }
            entries.insert(
                key.to_string(),
                Entry {
                    line: line_no,
                    value: value.trim().to_string(),
                },
            );
        }
        for key in REQUIRED {
            if !entries.contains_key(key) {
                return Err(Error::Config {
                    line: 0,
                    key: key.to_string(),
                    message: "missing required key".into(),
                });
            }
        }

        let mut m = ModelConfig::desk();
        let mut t = TrainConfig::default();
        // keys that only make sense together or against other keys are checked
        // below with the line of the key that carries the constraint
        macro_rules! set {
            ($key:literal, $field:expr) => {
                if let Some(e) = entries.get($key) {
                    $field = parse_value($key, e)?;
                }
            };
        }
        set!("encoder_layers", m.encoder_layers);
        set!("hidden", m.hidden);
        set!("ffn", m.ffn_inner);
        set!("heads", m.heads);
        set!("head_size", m.head_size);
        set!("vocab_size", m.vocab_size);
        set!("max_seq_len", m.max_seq_len);
        set!("ln_placement", m.ln_placement);
        set!("decoder_layers", m.decoder_layers);
        set!("mix_decoder_prob", m.mix_decoder_prob);
        set!("layer_norm_eps", m.layer_norm_eps);
        set!("hidden_dropout", m.hidden_dropout);
        set!("attn_dropout", m.attn_dropout);
        set!("init_std", m.init_std);
        set!("precision", m.precision);
        set!("steps", t.steps);
        set!("batch_size", t.batch_size);
        set!("seq_len", t.seq_len);
        set!("learning_rate", t.learning_rate);
        set!("warmup_frac", t.warmup_frac);
        set!("adam_beta1", t.adam_beta1);
        set!("adam_beta2", t.adam_beta2);
        set!("adam_eps", t.adam_eps);
        set!("weight_decay", t.weight_decay);
        set!("checkpoint_every", t.checkpoint_every);
        if !entries.contains_key("seq_len") {
            t.seq_len = t.seq_len.min(m.max_seq_len);
        }

        let layers: Vec<usize> = match entries.get("gua_layers") {
            Some(e) => parse_list("gua_layers", e)?,
            None => Vec::new(),
        };
        let rates: Vec<f64> = match entries.get("gua_rates") {
            Some(e) => parse_list("gua_rates", e)?,
            None => Vec::new(),
        };
        let schedule_line = entries
            .get("gua_rates")
            .or_else(|| entries.get("gua_layers"))
            .map_or(0, |e| e.line);
        if layers.len() != rates.len() {
            return Err(Error::Config {
                line: schedule_line,
                key: "gua_rates".into(),
                message: format!(
                    "{} rates for {} gua_layers",
                    rates.len(),
                    layers.len()
                ),
            });
        }
        m.gua_schedule = GuaSchedule::new(layers.into_iter().zip(rates).collect()).map_err(|e| {
            Error::Config {
                line: schedule_line,
                key: "gua_rates".into(),
                message: e.to_string(),
            }
        })?;
        if !entries.contains_key("gua_layers") && m.decoder_layers > 0 {
            // no explicit schedule: the decoder reveals everything at its last layer
            m.gua_schedule = GuaSchedule::new(vec![(m.decoder_layers, 1.0)])?;
        }

        let line_of = |key: &str| entries.get(key).map_or(0, |e| e.line);
        if let Err(e) = m.validate() {
            let key = match &e {
                Error::InvalidSchedule(_) => "gua_layers",
                Error::InvalidMixProb(_) => "mix_decoder_prob",
                Error::InvalidConfig(msg) if msg.contains("heads x head_size") => "head_size",
                Error::InvalidConfig(msg) => KNOWN
                    .iter()
                    .find(|k| msg.starts_with(**k))
                    .copied()
                    .unwrap_or("hidden"),
                _ => "hidden",
            };
            return Err(Error::Config {
                line: line_of(key),
                key: key.into(),
                message: e.to_string(),
            });
        }
        if let Err(e) = t.validate(&m) {
            return Err(Error::Config {
                line: 0,
                key: "train".into(),
                message: e.to_string(),
            });
        }
        Ok(Self { model: m, train: t })
    }

    /// Canonical text form: every key, fixed order, round-trips through [`Config::parse`].
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let join = |v: Vec<String>| v.join(",");
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("encoder_layers", m.encoder_layers.to_string());
        kv("hidden", m.hidden.to_string());
        kv("ffn", m.ffn_inner.to_string());
        kv("heads", m.heads.to_string());
        kv("head_size", m.head_size.to_string());
        kv("vocab_size", m.vocab_size.to_string());
        kv("max_seq_len", m.max_seq_len.to_string());
        kv("ln_placement", m.ln_placement.name().into());
        kv("decoder_layers", m.decoder_layers.to_string());
        kv("gua_layers", join(m.gua_schedule.layers().iter().map(|v| v.to_string()).collect()));
        kv("gua_rates", join(m.gua_schedule.rates().iter().map(|v| format!("{v:?}")).collect()));
        kv("mix_decoder_prob", format!("{:?}", m.mix_decoder_prob));
        kv("layer_norm_eps", format!("{:e}", m.layer_norm_eps));
        kv("hidden_dropout", format!("{:?}", m.hidden_dropout));
        kv("attn_dropout", format!("{:?}", m.attn_dropout));
        kv("init_std", format!("{:?}", m.init_std));
        kv("precision", m.precision.name().into());
        kv("steps", t.steps.to_string());
        kv("batch_size", t.batch_size.to_string());
        kv("seq_len", t.seq_len.to_string());
        kv("learning_rate", format!("{:e}", t.learning_rate));
        kv("warmup_frac", format!("{:?}", t.warmup_frac));
        kv("adam_beta1", format!("{:?}", t.adam_beta1));
        kv("adam_beta2", format!("{:?}", t.adam_beta2));
        kv("adam_eps", format!("{:e}", t.adam_eps));
        kv("weight_decay", format!("{:?}", t.weight_decay));
        kv("checkpoint_every", t.checkpoint_every.to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE_H256: &str = "\
# base-h256
encoder_layers = 12
hidden = 256
ffn = 1024
heads = 4
head_size = 64
decoder_layers = 2
gua_layers = 1,2
gua_rates = 0.5,1.0
mix_decoder_prob = 0.8
";

    #[test]
    fn base_h256_file_accepted() {
        let c = Config::parse(BASE_H256).unwrap();
        assert_eq!(c.model.encoder_layers, 12);
        assert_eq!(c.model.hidden, 256);
        assert_eq!(c.model.ffn_inner, 1024);
        assert_eq!(c.model.heads, 4);
        assert_eq!(c.model.head_size, 64);
        assert_eq!(c.model.decoder_layers, 2);
        assert_eq!(c.model.gua_schedule, GuaSchedule::half_then_all());
        assert_eq!(c.model.mix_decoder_prob, 0.8);
    }

    #[test]
    fn presets_match_table_rows() {
        let b = ModelConfig::base_h256();
        assert_eq!((b.encoder_layers, b.hidden, b.ffn_inner, b.heads, b.head_size), (12, 256, 1024, 4, 64));
        let l = ModelConfig::large();
        assert_eq!((l.encoder_layers, l.hidden, l.ffn_inner, l.heads, l.decoder_layers), (24, 1024, 4096, 16, 4));
        assert_eq!(l.gua_schedule.layers(), vec![1, 3]);
        for c in [ModelConfig::base_h256(), ModelConfig::base(), l, ModelConfig::desk(), ModelConfig::tiny()] {
            c.validate().unwrap();
            assert_eq!(c.heads * c.head_size, c.hidden);
        }
    }

    #[test]
    fn head_product_mismatch_rejected() {
        let text = BASE_H256.replace("hidden = 256", "hidden = 128");
        match Config::parse(&text) {
            Err(Error::Config { key, line, .. }) => {
                assert_eq!(key, "head_size");
                assert_eq!(line, 6);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn final_rate_must_be_one() {
        let text = BASE_H256.replace("0.5,1.0", "0.5,0.9");
        match Config::parse(&text) {
            Err(Error::Config { key, line, .. }) => {
                assert_eq!(key, "gua_rates");
                assert_eq!(line, 9);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_missing_and_malformed_keys() {
        let e = Config::parse(&format!("{BASE_H256}colour = blue\n")).unwrap_err();
        assert!(matches!(e, Error::Config { ref key, line: 11, .. } if key == "colour"), "{e}");
        let e = Config::parse(&BASE_H256.replace("hidden = 256\n", "")).unwrap_err();
        assert!(matches!(e, Error::Config { ref key, .. } if key == "hidden"), "{e}");
        let e = Config::parse(&BASE_H256.replace("heads = 4", "heads = four")).unwrap_err();
        assert!(matches!(e, Error::Config { ref key, line: 5, .. } if key == "heads"), "{e}");
        let e = Config::parse(&format!("{BASE_H256}hidden = 256\n")).unwrap_err();
        assert!(matches!(e, Error::Config { ref key, .. } if key == "hidden"), "{e}");
    }

    #[test]
    fn canonical_text_round_trips() {
        for model in [ModelConfig::large(), ModelConfig::tiny(), ModelConfig::desk().encoder_only()] {
            let c = Config {
                train: TrainConfig {
                    seq_len: model.max_seq_len.min(32),
                    ..TrainConfig::default()
                },
                model,
            };
            assert_eq!(Config::parse(&c.to_text()).unwrap(), c);
        }
    }
}
