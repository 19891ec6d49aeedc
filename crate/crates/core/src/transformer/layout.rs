//! Parameter names and shapes.
//!
//! ```text
//! embeddings.{word,position,segment}        [V x h], [max_seq_len x h], [2 x h]
//! embeddings.ln.{gamma,beta}                 [h]
//! {encoder,decoder}.layer.<i>.attn.{wq,wk,wv,wo}   [h x h]
//! {encoder,decoder}.layer.<i>.attn.{bq,bk,bv,bo}   [h]
//! {encoder,decoder}.layer.<i>.attn_ln.{gamma,beta} [h]
//! {encoder,decoder}.layer.<i>.ffn.w1 [h x ffn], b1 [ffn], w2 [ffn x h], b2 [h]
//! {encoder,decoder}.layer.<i>.ffn_ln.{gamma,beta}  [h]
//! {encoder,decoder}.final_ln.{gamma,beta}          [h]   (pre-LN only)
//! mlm_head.transform.{w,b}                   [h x h], [h]
//! mlm_head.ln.{gamma,beta}                   [h]
//! mlm_head.bias                              [V]
//! ```
//!
//! Layer indices are 0-based. The MLM output projection reuses
//! `embeddings.word`, so it has no parameter of its own.

use crate::config::{LnPlacement, ModelConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Truncated normal with the config's `init_std`.
    Normal,
    Zeros,
    Ones,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamScope {
    /// Embeddings, encoder, decoder and MLM head: everything pretraining touches.
    Full,
    /// Embeddings and encoder only: the finetuning / inference model.
    EncoderOnly,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

fn spec(name: String, shape: Vec<usize>, init: Init) -> ParamSpec {
    ParamSpec { name, shape, init }
}

pub fn layer_prefix(stack: &str, layer: usize) -> String {
    format!("{stack}.layer.{layer}")
}

fn norm(out: &mut Vec<ParamSpec>, prefix: &str, h: usize) {
    out.push(spec(format!("{prefix}.gamma"), vec![h], Init::Ones));
    out.push(spec(format!("{prefix}.beta"), vec![h], Init::Zeros));
}

fn block(out: &mut Vec<ParamSpec>, prefix: &str, c: &ModelConfig) {
    let h = c.hidden;
    for m in ["q", "k", "v", "o"] {
        out.push(spec(format!("{prefix}.attn.w{m}"), vec![h, h], Init::Normal));
        out.push(spec(format!("{prefix}.attn.b{m}"), vec![h], Init::Zeros));
    }
    norm(out, &format!("{prefix}.attn_ln"), h);
    out.push(spec(format!("{prefix}.ffn.w1"), vec![h, c.ffn_inner], Init::Normal));
    out.push(spec(format!("{prefix}.ffn.b1"), vec![c.ffn_inner], Init::Zeros));
    out.push(spec(format!("{prefix}.ffn.w2"), vec![c.ffn_inner, h], Init::Normal));
    out.push(spec(format!("{prefix}.ffn.b2"), vec![h], Init::Zeros));
    norm(out, &format!("{prefix}.ffn_ln"), h);
}

fn stack(out: &mut Vec<ParamSpec>, name: &str, layers: usize, c: &ModelConfig) {
    for i in 0..layers {
        block(out, &layer_prefix(name, i), c);
    }
    if c.ln_placement == LnPlacement::Pre && layers > 0 {
        norm(out, &format!("{name}.final_ln"), c.hidden);
    }
}

/// Every parameter of `config` within `scope`, sorted by name.
pub fn param_layout(config: &ModelConfig, scope: ParamScope) -> Vec<ParamSpec> {
    let h = config.hidden;
    let mut out = vec![
        spec("embeddings.word".into(), vec![config.vocab_size, h], Init::Normal),
        spec("embeddings.position".into(), vec![config.max_seq_len, h], Init::Normal),
        spec("embeddings.segment".into(), vec![2, h], Init::Normal),
    ];
    norm(&mut out, "embeddings.ln", h);
    stack(&mut out, "encoder", config.encoder_layers, config);
    if scope == ParamScope::Full {
        stack(&mut out, "decoder", config.decoder_layers, config);
        out.push(spec("mlm_head.transform.w".into(), vec![h, h], Init::Normal));
        out.push(spec("mlm_head.transform.b".into(), vec![h], Init::Zeros));
        norm(&mut out, "mlm_head.ln", h);
        out.push(spec("mlm_head.bias".into(), vec![config.vocab_size], Init::Zeros));
    }
    out.sort_by(|a, b| a.name.cmp(&b.name));
    out
}

/// Whether a parameter belongs to the encoder-only (exported) model.
pub fn is_encoder_param(name: &str) -> bool {
    name.starts_with("embeddings.") || name.starts_with("encoder.")
}
