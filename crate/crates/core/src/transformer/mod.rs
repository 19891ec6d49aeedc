//! Embeddings, key-blocked multi-head attention, transformer blocks and the
//! encoder stack.
//!
//! Sequences of a batch are laid out back to back as rows of one
//! `[batch * seq_len x hidden]` matrix. Position-wise layers run over all rows
//! at once; attention runs per sequence and per head.
//!
//! Key blocking follows BERT pretraining as drawn for masked positions: a
//! blocked position cannot be attended TO (its key column gets a `-1e9`
//! logit), but its own query row still attends over the unblocked keys.

mod layout;

pub use layout::{is_encoder_param, layer_prefix, param_layout, Init, ParamScope, ParamSpec};

use rand::Rng as _;

use crate::config::{LnPlacement, ModelConfig};
use crate::data::CLS;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Graph, ParamStore, Tensor, Var};

/// Additive logit applied to blocked key columns.
pub const BLOCKED_LOGIT: f64 = -1e9;

/// Per-position key blocking over a flattened batch; `true` = blocked as a key.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeyBlock {
    blocked: Vec<bool>,
}

impl KeyBlock {
    pub fn new(blocked: Vec<bool>) -> Self {
        Self { blocked }
    }

    pub fn unblocked(len: usize) -> Self {
        Self {
            blocked: vec![false; len],
        }
    }

    pub fn blocked(&self) -> &[bool] {
        &self.blocked
    }

    pub fn len(&self) -> usize {
        self.blocked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocked.is_empty()
    }

    /// Lifts the block wherever `unmask` is set; `keep` positions (pads) stay blocked.
    pub fn lift(&self, unmask: &[bool], keep: &[bool]) -> Self {
        let blocked = self
            .blocked
            .iter()
            .zip(unmask)
            .zip(keep)
            .map(|((&b, &u), &k)| k || (b && !u))
            .collect();
        Self { blocked }
    }

    /// Every sequence of length `seq_len` must keep at least one key.
    pub fn check(&self, seq_len: usize) -> Result<()> {
        if seq_len == 0 || !self.blocked.len().is_multiple_of(seq_len) {
            return Err(Error::InvalidRequest(format!(
                "key block of length {} is not a whole number of sequences of length {seq_len}",
                self.blocked.len()
            )));
        }
        for (sequence, chunk) in self.blocked.chunks(seq_len).enumerate() {
            if chunk.iter().all(|&b| b) {
                return Err(Error::AllKeysBlocked { sequence });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stack {
    Encoder,
    Decoder,
}

impl Stack {
    pub fn name(self) -> &'static str {
        match self {
            Stack::Encoder => "encoder",
            Stack::Decoder => "decoder",
        }
    }
}

/// Attention-probability handles of one layer, indexed `[sequence][head]`.
#[derive(Clone, Debug)]
pub struct TracedLayer {
    pub stack: Stack,
    /// 1-based layer index within its stack.
    pub layer: usize,
    pub probs: Vec<Vec<Var>>,
}

/// Collects attention probabilities during a forward pass.
#[derive(Clone, Debug, Default)]
pub struct AttentionTrace {
    pub layers: Vec<TracedLayer>,
}

impl AttentionTrace {
    pub fn find(&self, stack: Stack, layer: usize) -> Option<&TracedLayer> {
        self.layers.iter().find(|l| l.stack == stack && l.layer == layer)
    }
}

/// Everything a forward pass threads through the layers.
pub struct Forward<'a> {
    pub graph: &'a mut Graph,
    pub params: &'a ParamStore,
    pub config: &'a ModelConfig,
    pub seq_len: usize,
    /// Dropout draws; `None` disables dropout regardless of the config.
    pub dropout: Option<&'a mut Rng>,
    pub trace: Option<&'a mut AttentionTrace>,
    current: Option<(Stack, usize)>,
}

impl<'a> Forward<'a> {
    pub fn new(
        graph: &'a mut Graph,
        params: &'a ParamStore,
        config: &'a ModelConfig,
        seq_len: usize,
    ) -> Self {
        Self {
            graph,
            params,
            config,
            seq_len,
            dropout: None,
            trace: None,
            current: None,
        }
    }

    pub fn with_dropout(mut self, rng: &'a mut Rng) -> Self {
        self.dropout = Some(rng);
        self
    }

    pub fn with_trace(mut self, trace: &'a mut AttentionTrace) -> Self {
        self.trace = Some(trace);
        self
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        self.graph.param(self.params, name)
    }

    fn linear(&mut self, x: Var, w: &str, b: &str) -> Result<Var> {
        let w = self.param(w)?;
        let b = self.param(b)?;
        let xw = self.graph.matmul(x, w)?;
        self.graph.add_row(xw, b)
    }

    fn norm(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let gamma = self.param(&format!("{prefix}.gamma"))?;
        let beta = self.param(&format!("{prefix}.beta"))?;
        self.graph.layer_norm(x, gamma, beta, self.config.layer_norm_eps)
    }

    fn dropout(&mut self, x: Var, p: f64) -> Result<Var> {
        let Some(rng) = self.dropout.as_deref_mut() else {
            return Ok(x);
        };
        if p == 0.0 {
            return Ok(x);
        }
        let shape = self.graph.shape(x).to_vec();
        let n: usize = shape.iter().product();
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let m = self.graph.constant(Tensor::new(shape, mask)?);
        self.graph.mul(x, m)
    }
}

/// Token + learned absolute position + segment-0 embeddings, then LayerNorm.
/// `ids` holds whole sequences of length `fwd.seq_len` back to back.
pub fn embed(fwd: &mut Forward<'_>, ids: &[usize]) -> Result<Var> {
    let s = fwd.seq_len;
    if s > fwd.config.max_seq_len {
        return Err(Error::SequenceTooLong {
            len: s,
            max: fwd.config.max_seq_len,
        });
    }
    if s == 0 || !ids.len().is_multiple_of(s) {
        return Err(Error::InvalidRequest(format!(
            "{} ids do not form whole sequences of length {s}",
            ids.len()
        )));
    }
    let vocab = fwd.config.vocab_size;
    if let Some((position, &id)) = ids.iter().enumerate().find(|(_, &id)| id >= vocab) {
        return Err(Error::TokenOutOfRange { position, id, vocab });
    }
    let positions: Vec<usize> = (0..ids.len()).map(|i| i % s).collect();
    let segments = vec![0usize; ids.len()];

    let word = fwd.param("embeddings.word")?;
    let pos = fwd.param("embeddings.position")?;
    let seg = fwd.param("embeddings.segment")?;
    let w = fwd.graph.gather_rows(word, ids)?;
    let p = fwd.graph.gather_rows(pos, &positions)?;
    let g = fwd.graph.gather_rows(seg, &segments)?;
    let sum = fwd.graph.add(w, p)?;
    let sum = fwd.graph.add(sum, g)?;
    let out = fwd.norm(sum, "embeddings.ln")?;
    let p = fwd.config.hidden_dropout;
    fwd.dropout(out, p)
}

/// Scaled dot-product attention per sequence and head, with blocked key
/// columns pushed to `-1e9` before the softmax, heads concatenated and
/// projected by `wo`. Parameters are read from `<prefix>.{wq,bq,...}`.
pub fn multi_head_attention(
    fwd: &mut Forward<'_>,
    x: Var,
    key_block: &KeyBlock,
    prefix: &str,
) -> Result<Var> {
    let s = fwd.seq_len;
    key_block.check(s)?;
    let rows = fwd.graph.shape(x)[0];
    if key_block.len() != rows {
        return Err(Error::ShapeMismatch {
            op: "multi_head_attention",
            left: fwd.graph.shape(x).to_vec(),
            right: vec![key_block.len()],
        });
    }
    let heads = fwd.config.heads;
    let d = fwd.config.head_size;
    let scale = 1.0 / (d as f64).sqrt();

    let q = fwd.linear(x, &format!("{prefix}.wq"), &format!("{prefix}.bq"))?;
    let k = fwd.linear(x, &format!("{prefix}.wk"), &format!("{prefix}.bk"))?;
    let v = fwd.linear(x, &format!("{prefix}.wv"), &format!("{prefix}.bv"))?;

    let n_seq = rows / s;
    let mut per_seq = Vec::with_capacity(n_seq);
    let mut traced: Vec<Vec<Var>> = Vec::with_capacity(n_seq);
    for b in 0..n_seq {
        let bias: Vec<f64> = key_block.blocked()[b * s..(b + 1) * s]
            .iter()
            .map(|&blk| if blk { BLOCKED_LOGIT } else { 0.0 })
            .collect();
        let bias = fwd.graph.constant(Tensor::new(vec![s], bias)?);
        let qb = fwd.graph.slice_rows(q, b * s, s)?;
        let kb = fwd.graph.slice_rows(k, b * s, s)?;
        let vb = fwd.graph.slice_rows(v, b * s, s)?;
        let mut head_out = Vec::with_capacity(heads);
        let mut head_probs = Vec::with_capacity(heads);
        for hd in 0..heads {
            let qh = fwd.graph.slice_cols(qb, hd * d, d)?;
            let kh = fwd.graph.slice_cols(kb, hd * d, d)?;
            let vh = fwd.graph.slice_cols(vb, hd * d, d)?;
            let kt = fwd.graph.transpose(kh)?;
            let scores = fwd.graph.matmul(qh, kt)?;
            let scores = fwd.graph.scale(scores, scale);
            let scores = fwd.graph.add_row(scores, bias)?;
            let probs = fwd.graph.softmax_rows(scores);
            head_probs.push(probs);
            let p = fwd.config.attn_dropout;
            let probs = fwd.dropout(probs, p)?;
            head_out.push(fwd.graph.matmul(probs, vh)?);
        }
        traced.push(head_probs);
        per_seq.push(if heads == 1 {
            head_out[0]
        } else {
            fwd.graph.concat_cols(&head_out)?
        });
    }
    let ctx = if n_seq == 1 {
        per_seq[0]
    } else {
        fwd.graph.concat_rows(&per_seq)?
    };
    if let (Some(trace), Some((stack, layer))) = (fwd.trace.as_deref_mut(), fwd.current) {
        trace.layers.push(TracedLayer {
            stack,
            layer,
            probs: traced,
        });
    }
    fwd.linear(ctx, &format!("{prefix}.wo"), &format!("{prefix}.bo"))
}

fn feed_forward(fwd: &mut Forward<'_>, x: Var, prefix: &str) -> Result<Var> {
    let h = fwd.linear(x, &format!("{prefix}.w1"), &format!("{prefix}.b1"))?;
    let h = fwd.graph.gelu(h);
    fwd.linear(h, &format!("{prefix}.w2"), &format!("{prefix}.b2"))
}

/// One transformer block with parameters under `prefix` (e.g. `encoder.layer.0`).
///
/// Post-LN: `h = LN(x + attn(x))`, `out = LN(h + ffn(h))`.
/// Pre-LN: `h = x + attn(LN(x))`, `out = h + ffn(LN(h))`.
pub fn transformer_block(
    fwd: &mut Forward<'_>,
    x: Var,
    key_block: &KeyBlock,
    prefix: &str,
) -> Result<Var> {
    let p = fwd.config.hidden_dropout;
    match fwd.config.ln_placement {
        LnPlacement::Post => {
            let a = multi_head_attention(fwd, x, key_block, &format!("{prefix}.attn"))?;
            let a = fwd.dropout(a, p)?;
            let h = fwd.graph.add(x, a)?;
            let h = fwd.norm(h, &format!("{prefix}.attn_ln"))?;
            let f = feed_forward(fwd, h, &format!("{prefix}.ffn"))?;
            let f = fwd.dropout(f, p)?;
            let out = fwd.graph.add(h, f)?;
            fwd.norm(out, &format!("{prefix}.ffn_ln"))
        }
        LnPlacement::Pre => {
            let n = fwd.norm(x, &format!("{prefix}.attn_ln"))?;
            let a = multi_head_attention(fwd, n, key_block, &format!("{prefix}.attn"))?;
            let a = fwd.dropout(a, p)?;
            let h = fwd.graph.add(x, a)?;
            let n = fwd.norm(h, &format!("{prefix}.ffn_ln"))?;
            let f = feed_forward(fwd, n, &format!("{prefix}.ffn"))?;
            let f = fwd.dropout(f, p)?;
            fwd.graph.add(h, f)
        }
    }
}

/// Runs `key_blocks.len()` blocks of `stack`, layer `i` using `key_blocks[i]`.
/// Returns the final hidden states and every layer's output.
pub fn stack_forward(
    fwd: &mut Forward<'_>,
    x: Var,
    stack: Stack,
    key_blocks: &[&KeyBlock],
) -> Result<(Var, Vec<Var>)> {
    let mut h = x;
    let mut layers = Vec::with_capacity(key_blocks.len());
    for (i, kb) in key_blocks.iter().enumerate() {
        fwd.current = Some((stack, i + 1));
        h = transformer_block(fwd, h, kb, &layer_prefix(stack.name(), i))?;
        layers.push(h);
    }
    fwd.current = None;
    if fwd.config.ln_placement == LnPlacement::Pre && !key_blocks.is_empty() {
        h = fwd.norm(h, &format!("{}.final_ln", stack.name()))?;
    }
    Ok((h, layers))
}

/// The encoder: `encoder_layers` blocks that all share one key block.
pub fn encoder_forward(fwd: &mut Forward<'_>, embedded: Var, key_block: &KeyBlock) -> Result<Var> {
    let blocks = vec![key_block; fwd.config.encoder_layers];
    stack_forward(fwd, embedded, Stack::Encoder, &blocks).map(|(h, _)| h)
}

/// Row index of every sequence's `[CLS]` token in a flattened batch.
pub fn cls_rows(ids: &[usize], seq_len: usize) -> Result<Vec<usize>> {
    (0..ids.len() / seq_len)
        .map(|b| {
            if ids[b * seq_len] == CLS {
                Ok(b * seq_len)
            } else {
                Err(Error::InvalidRequest(format!("sequence {b} does not start with [CLS]")))
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{finite_diff_check, kernels, DType};
    use crate::train::init_params;

    fn tiny() -> (ModelConfig, ParamStore) {
        let c = ModelConfig::tiny();
        let p = init_params(&c, ParamScope::Full, 11).unwrap();
        (c, p)
    }

    /// Random hidden states as a constant input.
    fn hidden_input(rows: usize, h: usize, salt: u64) -> Tensor {
        let mut rng = crate::rng::substream(salt, "test");
        Tensor::new(vec![rows, h], (0..rows * h).map(|_| rng.random::<f64>() - 0.5).collect()).unwrap()
    }

    fn attention_out(c: &ModelConfig, p: &ParamStore, x: &Tensor, kb: &KeyBlock) -> (Tensor, Vec<Tensor>) {
        let mut g = Graph::new(DType::F64);
        let mut trace = AttentionTrace::default();
        let out = {
            let mut fwd = Forward::new(&mut g, p, c, x.rows()).with_trace(&mut trace);
            fwd.current = Some((Stack::Encoder, 1));
            let xv = fwd.graph.constant(x.clone());
            multi_head_attention(&mut fwd, xv, kb, "encoder.layer.0.attn").unwrap()
        };
        let probs = trace.layers[0].probs[0].iter().map(|&v| g.value(v).clone()).collect();
        (g.value(out).clone(), probs)
    }

    fn linear(x: &Tensor, p: &ParamStore, w: &str, b: &str) -> Tensor {
        let mut y = kernels::matmul(x, p.get(w).unwrap()).unwrap();
        let cols = y.cols();
        let bias = p.get(b).unwrap().data().to_vec();
        for (i, v) in y.data_mut().iter_mut().enumerate() {
            *v += bias[i % cols];
        }
        y
    }

    #[test]
    fn embed_positions_and_bounds() {
        let (c, p) = tiny();
        let mut g = Graph::new(DType::F64);
        let mut fwd = Forward::new(&mut g, &p, &c, 3);
        let x = embed(&mut fwd, &[7, 7, 9]).unwrap();
        let v = g.value(x);
        assert_eq!(v.shape(), &[3, c.hidden]);
        assert_ne!(v.row(0), v.row(1));

        let mut g = Graph::new(DType::F64);
        let s = c.max_seq_len;
        assert!(embed(&mut Forward::new(&mut g, &p, &c, s), &vec![5; s]).is_ok());
        let err = embed(&mut Forward::new(&mut g, &p, &c, s + 1), &vec![5; s + 1]);
        assert!(matches!(err, Err(Error::SequenceTooLong { .. })));
        let err = embed(&mut Forward::new(&mut g, &p, &c, 3), &[5, 99, 5]);
        assert!(matches!(err, Err(Error::TokenOutOfRange { position: 1, id: 99, .. })));
    }

    #[test]
    fn single_key_attention_copies_its_value() {
        let (c, p) = tiny();
        let x = hidden_input(5, c.hidden, 1);
        let j = 3;
        let kb = KeyBlock::new((0..5).map(|i| i != j).collect());
        let (out, probs) = attention_out(&c, &p, &x, &kb);
        for pr in &probs {
            for q in 0..5 {
                assert_eq!(pr.row(q)[j], 1.0);
            }
        }
        let pre = "encoder.layer.0.attn";
        let v = linear(&x, &p, &format!("{pre}.wv"), &format!("{pre}.bv"));
        let vj = Tensor::new(vec![1, c.hidden], v.row(j).to_vec()).unwrap();
        let expect = linear(&vj, &p, &format!("{pre}.wo"), &format!("{pre}.bo"));
        for q in 0..5 {
            for (a, b) in out.row(q).iter().zip(expect.row(0)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn blocked_columns_get_exactly_zero() {
        let (c, p) = tiny();
        let x = hidden_input(6, c.hidden, 2);
        let kb = KeyBlock::new(vec![false, true, false, false, true, true]);
        let (_, probs) = attention_out(&c, &p, &x, &kb);
        for pr in &probs {
            for q in 0..6 {
                let row = pr.row(q);
                assert_eq!((row[1], row[4], row[5]), (0.0, 0.0, 0.0));
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn unblocked_matches_naive_oracle() {
        let (c, p) = tiny();
        let s = 5;
        let x = hidden_input(s, c.hidden, 3);
        let (out, _) = attention_out(&c, &p, &x, &KeyBlock::unblocked(s));
        let pre = "encoder.layer.0.attn";
        let q = linear(&x, &p, &format!("{pre}.wq"), &format!("{pre}.bq"));
        let k = linear(&x, &p, &format!("{pre}.wk"), &format!("{pre}.bk"));
        let v = linear(&x, &p, &format!("{pre}.wv"), &format!("{pre}.bv"));
        let d = c.head_size;
        let mut ctx = vec![0.0; s * c.hidden];
        for h in 0..c.heads {
            for i in 0..s {
                let scores: Vec<f64> = (0..s)
                    .map(|j| (0..d).map(|t| q.get2(i, h * d + t) * k.get2(j, h * d + t)).sum::<f64>() / (d as f64).sqrt())
                    .collect();
                let z: f64 = scores.iter().map(|x| x.exp()).sum();
                for j in 0..s {
                    let w = scores[j].exp() / z;
                    for t in 0..d {
                        ctx[i * c.hidden + h * d + t] += w * v.get2(j, h * d + t);
                    }
                }
            }
        }
        let ctx = Tensor::new(vec![s, c.hidden], ctx).unwrap();
        let expect = linear(&ctx, &p, &format!("{pre}.wo"), &format!("{pre}.bo"));
        for (a, b) in out.data().iter().zip(expect.data()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn all_keys_blocked_rejected() {
        let (c, p) = tiny();
        let x = hidden_input(3, c.hidden, 4);
        let mut g = Graph::new(DType::F64);
        let mut fwd = Forward::new(&mut g, &p, &c, 3);
        let xv = fwd.graph.constant(x);
        let kb = KeyBlock::new(vec![true; 3]);
        let err = multi_head_attention(&mut fwd, xv, &kb, "encoder.layer.0.attn");
        assert!(matches!(err, Err(Error::AllKeysBlocked { sequence: 0 })));
    }

    fn block_out(c: &ModelConfig, p: &ParamStore, x: &Tensor) -> Tensor {
        let mut g = Graph::new(DType::F64);
        let mut fwd = Forward::new(&mut g, p, c, x.rows());
        let xv = fwd.graph.constant(x.clone());
        let out = transformer_block(&mut fwd, xv, &KeyBlock::unblocked(x.rows()), "encoder.layer.0").unwrap();
        g.value(out).clone()
    }

    #[test]
    fn pre_and_post_ln_differ() {
        let (mut c, _) = tiny();
        let x = hidden_input(4, c.hidden, 5);
        let post = init_params(&c, ParamScope::Full, 1).unwrap();
        c.ln_placement = LnPlacement::Pre;
        let pre = init_params(&c, ParamScope::Full, 1).unwrap();
        let a = block_out(&ModelConfig::tiny(), &post, &x);
        let b = block_out(&c, &pre, &x);
        assert_ne!(a, b);
    }

    #[test]
    fn zeroed_sublayer_outputs_leave_the_residual_path() {
        let (mut c, mut p) = tiny();
        for n in ["attn.wo", "attn.bo", "ffn.w2", "ffn.b2"] {
            let t = p.get_mut(&format!("encoder.layer.0.{n}")).unwrap();
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let x = hidden_input(4, c.hidden, 6);
        let ln = |t: &Tensor, pre: &str| {
            kernels::layer_norm(
                t,
                p.get(&format!("{pre}.gamma")).unwrap(),
                p.get(&format!("{pre}.beta")).unwrap(),
                c.layer_norm_eps,
            )
            .unwrap()
        };
        let expect = ln(&ln(&x, "encoder.layer.0.attn_ln"), "encoder.layer.0.ffn_ln");
        let got = block_out(&c, &p, &x);
        for (a, b) in got.data().iter().zip(expect.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        c.ln_placement = LnPlacement::Pre;
        assert_eq!(block_out(&c, &p, &x), x);
    }

    #[test]
    fn block_gradients_match_finite_differences() {
        for placement in [LnPlacement::Post, LnPlacement::Pre] {
            let mut c = ModelConfig::tiny();
            c.ln_placement = placement;
            let mut p = init_params(&c, ParamScope::EncoderOnly, 2).unwrap();
            p.retain(|n| n.starts_with("encoder.layer.0."));
            let x = hidden_input(4, c.hidden, 7);
            let kb = KeyBlock::new(vec![false, true, false, false]);
            let report = finite_diff_check(
                |store, g| {
                    let mut fwd = Forward::new(g, store, &c, 4);
                    let xv = fwd.graph.constant(x.clone());
                    let out = transformer_block(&mut fwd, xv, &kb, "encoder.layer.0")?;
                    let sq = fwd.graph.mul(out, out)?;
                    let w = fwd.graph.constant(hidden_input(4, c.hidden, 8));
                    let sq = fwd.graph.mul(sq, w)?;
                    Ok(fwd.graph.sum(sq))
                },
                &p,
                1e-5,
            )
            .unwrap();
            assert!(report.max_rel_error < 1e-4, "{placement:?}: {report:?}");
        }
    }

    #[test]
    fn empty_encoder_is_identity() {
        let (mut c, p) = tiny();
        c.encoder_layers = 0;
        let x = hidden_input(4, c.hidden, 9);
        let mut g = Graph::new(DType::F64);
        let mut fwd = Forward::new(&mut g, &p, &c, 4);
        let xv = fwd.graph.constant(x.clone());
        let out = encoder_forward(&mut fwd, xv, &KeyBlock::unblocked(4)).unwrap();
        assert_eq!(g.value(out), &x);
    }

    #[test]
    fn base_h256_encoder_shape() {
        let mut c = ModelConfig::base_h256();
        c.vocab_size = 40;
        c.max_seq_len = 8;
        c.precision = DType::F64;
        let p = init_params(&c, ParamScope::EncoderOnly, 1).unwrap();
        let mut g = Graph::new(DType::F64);
        let mut fwd = Forward::new(&mut g, &p, &c, 6);
        let x = embed(&mut fwd, &[2, 9, 10, 11, 3, 0]).unwrap();
        let h = encoder_forward(&mut fwd, x, &KeyBlock::new(vec![false, false, false, false, false, true])).unwrap();
        assert_eq!(g.value(h).shape(), &[6, 256]);
        assert_eq!((c.encoder_layers, c.ffn_inner, c.heads), (12, 1024, 4));
    }

    #[test]
    fn key_block_lift_keeps_pads() {
        let kb = KeyBlock::new(vec![true, true, false, true]);
        let lifted = kb.lift(&[true, false, false, true], &[false, false, false, true]);
        assert_eq!(lifted.blocked(), &[false, true, false, true]);
    }
}
