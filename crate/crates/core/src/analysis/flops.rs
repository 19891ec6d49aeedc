use std::fmt::Write as _;
use std::str::FromStr;

use crate::config::ModelConfig;
use crate::error::{Error, Result};

/// Fraction of positions the MLM head runs on.
pub const MASKED_FRACTION: f64 = 0.15;
/// Backward pass cost relative to the forward pass.
pub const BACKWARD_FACTOR: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Pretrain,
    Finetune,
    Inference,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::Finetune => "finetune",
            Phase::Inference => "inference",
        }
    }
}

impl FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrain" => Ok(Phase::Pretrain),
            "finetune" => Ok(Phase::Finetune),
            "inference" => Ok(Phase::Inference),
            _ => Err(Error::InvalidRequest(format!(
                "unknown phase {s:?}; expected pretrain, finetune or inference"
            ))),
        }
    }
}

/// Forward FLOPs of one transformer block on one sequence.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LayerFlops {
    /// Q, K, V and output projections: `8 s h^2`.
    pub projections: f64,
    /// Scores and weighted sum: `4 s^2 h`.
    pub attention: f64,
    /// Two FFN matmuls: `4 s h ffn`.
    pub ffn: f64,
}

impl LayerFlops {
    pub fn new(seq_len: usize, hidden: usize, ffn: usize) -> Self {
        let (s, h, f) = (seq_len as f64, hidden as f64, ffn as f64);
        Self {
            projections: 8.0 * s * h * h,
            attention: 4.0 * s * s * h,
            ffn: 4.0 * s * h * f,
        }
    }

    pub fn total(&self) -> f64 {
        self.projections + self.attention + self.ffn
    }
}

/// Forward+backward (or forward-only) FLOPs per data point of a model and of
/// its encoder-only baseline.
#[derive(Clone, Debug, PartialEq)]
pub struct FlopsReport {
    pub phase: Phase,
    pub seq_len: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub layer: LayerFlops,
    /// MLM head forward on the masked positions: `0.15 s (2 h^2 + 2 h V)`.
    pub head: f64,
    pub pretrain: f64,
    /// Decoder dropped before finetuning.
    pub finetune: f64,
    /// Finetuning cost had the decoder been kept (no MLM head).
    pub finetune_decoder_retained: f64,
    pub inference: f64,
    pub baseline_pretrain: f64,
    pub baseline_finetune: f64,
    pub baseline_inference: f64,
}

/// Analytic cost model: 2 FLOPs per multiply-add, backward = 2 x forward,
/// training phases count forward plus backward. Pretraining runs encoder,
/// decoder and the MLM head; finetuning and inference run the encoder only.
/// Embedding lookups, LayerNorm, softmax and biases are ignored.
pub fn flops_estimate(config: &ModelConfig, phase: Phase, seq_len: usize) -> FlopsReport {
    let layer = LayerFlops::new(seq_len, config.hidden, config.ffn_inner);
    let (h, v) = (config.hidden as f64, config.vocab_size as f64);
    let head = MASKED_FRACTION * seq_len as f64 * (2.0 * h * h + 2.0 * h * v);
    let train = 1.0 + BACKWARD_FACTOR;
    let enc = config.encoder_layers as f64 * layer.total();
    let dec = config.decoder_layers as f64 * layer.total();
    FlopsReport {
        phase,
        seq_len,
        encoder_layers: config.encoder_layers,
        decoder_layers: config.decoder_layers,
        layer,
        head,
        pretrain: train * (enc + dec + head),
        finetune: train * enc,
        finetune_decoder_retained: train * (enc + dec),
        inference: enc,
        baseline_pretrain: train * (enc + head),
        baseline_finetune: train * enc,
        baseline_inference: enc,
    }
}

impl FlopsReport {
    pub fn total(&self) -> f64 {
        match self.phase {
            Phase::Pretrain => self.pretrain,
            Phase::Finetune => self.finetune,
            Phase::Inference => self.inference,
        }
    }

    pub fn baseline_total(&self) -> f64 {
        match self.phase {
            Phase::Pretrain => self.baseline_pretrain,
            Phase::Finetune => self.baseline_finetune,
            Phase::Inference => self.baseline_inference,
        }
    }

    pub fn pretrain_ratio(&self) -> f64 {
        self.pretrain / self.baseline_pretrain
    }

    pub fn finetune_ratio(&self) -> f64 {
        self.finetune / self.baseline_finetune
    }

    pub fn finetune_retained_ratio(&self) -> f64 {
        self.finetune_decoder_retained / self.baseline_finetune
    }

    /// `section: value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}: {v}");
        };
        kv("convention", "2 flops per multiply-add; backward = 2x forward; training = forward + backward".into());
        kv("convention.head", format!("MLM head counted on {MASKED_FRACTION} of positions"));
        kv("convention.ignored", "embeddings, layer norm, softmax, biases".into());
        kv("phase", self.phase.name().into());
        kv("seq_len", self.seq_len.to_string());
        kv("encoder_layers", self.encoder_layers.to_string());
        kv("decoder_layers", self.decoder_layers.to_string());
        kv("layer.projections", format!("{:e}", self.layer.projections));
        kv("layer.attention", format!("{:e}", self.layer.attention));
        kv("layer.ffn", format!("{:e}", self.layer.ffn));
        kv("layer.total", format!("{:e}", self.layer.total()));
        kv("head.forward", format!("{:e}", self.head));
        kv("total", format!("{:e}", self.total()));
        kv("baseline.total", format!("{:e}", self.baseline_total()));
        kv("ratio", format!("{:.6}", self.total() / self.baseline_total()));
        kv("pretrain.total", format!("{:e}", self.pretrain));
        kv("pretrain.tflops", format!("{:.4}", self.pretrain / 1e12));
        kv("pretrain.baseline", format!("{:e}", self.baseline_pretrain));
        kv("pretrain.ratio", format!("{:.6}", self.pretrain_ratio()));
        kv("finetune.decoder_dropped.total", format!("{:e}", self.finetune));
        kv("finetune.decoder_dropped.ratio", format!("{:.6}", self.finetune_ratio()));
        kv("finetune.decoder_retained.total", format!("{:e}", self.finetune_decoder_retained));
        kv("finetune.decoder_retained.ratio", format!("{:.6}", self.finetune_retained_ratio()));
        kv(
            "finetune.note",
            "exported models drop the decoder; the retained figure is what finetuning would cost if it were kept".into(),
        );
        kv("inference.total", format!("{:e}", self.inference));
        kv("inference.ratio", format!("{:.6}", self.inference / self.baseline_inference));
        s
    }
}
