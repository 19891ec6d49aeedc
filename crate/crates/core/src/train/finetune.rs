use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};

use super::checkpoint::Checkpoint;
use super::export::{check_layout, require_no_decoder};
use super::optim::{adam_step, lr_at, AdamConfig, AdamState};
use crate::config::ModelConfig;
use crate::data::{apply_mlm_masking, MaskedBatch, MaskingPolicy, Vocab, PAD};
use crate::error::{Error, Result};
use crate::rng::substream;
use crate::tensor::{Graph, GraphSignature, ParamStore, Tensor, Var};
use crate::transformer::{cls_rows, embed, encoder_forward, is_encoder_param, Forward, KeyBlock, ParamScope};

/// A sequence-classification finetuning job.
#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneTaskSpec {
    pub num_labels: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seq_len: usize,
    /// Fraction of examples held out for the reported accuracy.
    pub dev_frac: f64,
}

impl Default for FinetuneTaskSpec {
    fn default() -> Self {
        Self {
            num_labels: 2,
            epochs: 5,
            learning_rate: 1e-3,
            batch_size: 16,
            seq_len: 32,
            dev_frac: 0.2,
        }
    }
}

impl FinetuneTaskSpec {
    pub fn validate(&self, model: &ModelConfig) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidTask(m));
        if self.num_labels < 2 {
            return bad(format!("classification needs at least 2 labels, got {}", self.num_labels));
        }
        if self.epochs == 0 || self.batch_size == 0 || !(self.learning_rate > 0.0) {
            return bad("epochs, batch_size and learning_rate must be positive".into());
        }
        if !(0.0 < self.dev_frac && self.dev_frac < 1.0) {
            return bad(format!("dev_frac must lie in (0, 1), got {}", self.dev_frac));
        }
        if self.seq_len < 3 || self.seq_len > model.max_seq_len {
            return bad(format!("seq_len {} outside [3, {}]", self.seq_len, model.max_seq_len));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct FinetuneResult {
    pub dev_accuracy: f64,
    pub dev_examples: usize,
    /// Encoder after finetuning plus `classifier.{w,b}`.
    pub params: ParamStore,
    /// Signature of the first training step's graph.
    pub signature: GraphSignature,
}

/// Encoder-only store of an accepted checkpoint; pretraining-head tensors of
/// a baseline checkpoint are left behind.
fn encoder_store(ckpt: &Checkpoint) -> Result<ParamStore> {
    require_no_decoder(ckpt)?;
    let mut p = ckpt.params.clone();
    p.retain(is_encoder_param);
    check_layout(&p, &ckpt.config.model, ParamScope::EncoderOnly)?;
    Ok(p)
}

/// Logits of the `[CLS]` rows; padding is the only key blocking.
fn classify_forward(fwd: &mut Forward<'_>, ids: &[usize]) -> Result<Var> {
    let block = KeyBlock::new(ids.iter().map(|&i| i == PAD).collect());
    let x = embed(fwd, ids)?;
    let h = encoder_forward(fwd, x, &block)?;
    let cls = fwd.graph.gather_rows(h, &cls_rows(ids, fwd.seq_len)?)?;
    let w = fwd.param("classifier.w")?;
    let b = fwd.param("classifier.b")?;
    let logits = fwd.graph.matmul(cls, w)?;
    fwd.graph.add_row(logits, b)
}

fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
        .0
}

/// Finetunes the encoder of `ckpt` plus a fresh linear head on the final
/// `[CLS]` state. Examples are shuffled with the `data` substream of `seed`;
/// the last `dev_frac` of that order is held out.
pub fn finetune_classify(
    ckpt: &Checkpoint,
    vocab: &Vocab,
    examples: &[(usize, String)],
    task: &FinetuneTaskSpec,
    seed: u64,
) -> Result<FinetuneResult> {
    let model = ckpt.config.model.clone();
    task.validate(&model)?;
    let mut params = encoder_store(ckpt)?;
    if let Some(&(label, _)) = examples.iter().find(|(l, _)| *l >= task.num_labels) {
        return Err(Error::InvalidTask(format!("label {label} >= num_labels {}", task.num_labels)));
    }
    let mut data: Vec<(usize, Vec<usize>)> = examples
        .iter()
        .map(|(l, line)| Ok((*l, vocab.encode_line(line, task.seq_len)?)))
        .collect::<Result<_>>()?;
    let mut order_rng = substream(seed, "data");
    data.shuffle(&mut order_rng);
    let n_dev = ((data.len() as f64) * task.dev_frac).round() as usize;
    if n_dev == 0 || data.len() - n_dev < task.batch_size {
        return Err(Error::InvalidTask(format!(
            "{} examples are too few for batch {} with dev fraction {}",
            data.len(),
            task.batch_size,
            task.dev_frac
        )));
    }
    let dev = data.split_off(data.len() - n_dev);
    let mut train = data;

    let mut head_rng = substream(seed, "init");
    let normal = Normal::new(0.0, model.init_std).expect("validated std");
    let h = model.hidden;
    let w: Vec<f64> = (0..h * task.num_labels).map(|_| normal.sample(&mut head_rng)).collect();
    params.insert("classifier.w", Tensor::new(vec![h, task.num_labels], w)?)?;
    params.insert("classifier.b", Tensor::zeros(&[task.num_labels]))?;
    params.set_dtype(model.precision);

    let mut adam = AdamState::new(&params);
    let adam_cfg = AdamConfig::default();
    let per_epoch = train.len() / task.batch_size;
    let total = (per_epoch * task.epochs) as u64;
    let mut signature = None;
    for _ in 0..task.epochs {
        train.shuffle(&mut order_rng);
        for chunk in train.chunks_exact(task.batch_size) {
            let ids: Vec<usize> = chunk.iter().flat_map(|(_, s)| s.iter().copied()).collect();
            let labels: Vec<usize> = chunk.iter().map(|(l, _)| *l).collect();
            let mut graph = Graph::new(model.precision);
            let mut fwd = Forward::new(&mut graph, &params, &model, task.seq_len);
            let logits = classify_forward(&mut fwd, &ids)?;
            let loss = graph.cross_entropy_masked(logits, &labels, &vec![true; labels.len()])?;
            if signature.is_none() {
                signature = Some(graph.signature());
            }
            let mut grads = graph.backward(loss)?;
            grads.fill_unreached(&params);
            let lr = lr_at(adam.step + 1, total, task.learning_rate, 0.1);
            adam_step(&mut params, &mut adam, &grads, lr, &adam_cfg)?;
        }
    }

    let mut correct = 0;
    for chunk in dev.chunks(task.batch_size) {
        let ids: Vec<usize> = chunk.iter().flat_map(|(_, s)| s.iter().copied()).collect();
        let mut graph = Graph::new(model.precision);
        let mut fwd = Forward::new(&mut graph, &params, &model, task.seq_len);
        let logits = classify_forward(&mut fwd, &ids)?;
        let logits = graph.value(logits);
        for (i, (label, _)) in chunk.iter().enumerate() {
            correct += usize::from(argmax(logits.row(i)) == *label);
        }
    }
    Ok(FinetuneResult {
        dev_accuracy: correct as f64 / dev.len() as f64,
        dev_examples: dev.len(),
        params,
        signature: signature.expect("at least one training batch"),
    })
}

/// Top-1 accuracy of masked-token prediction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClozeReport {
    pub masked: usize,
    pub correct: usize,
}

impl ClozeReport {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.masked as f64
    }
}

/// Masks `sequences` with the standard policy (drawn from the `masking`
/// substream of `seed`), runs the encoder and predicts every masked token.
///
/// A store with an MLM head uses it; an encoder-only store scores
/// `H E^T` against the tied word embeddings. The decoder is never run.
pub fn evaluate_cloze(ckpt: &Checkpoint, sequences: &[Vec<usize>], seed: u64) -> Result<ClozeReport> {
    if sequences.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let model = &ckpt.config.model;
    let with_head = ckpt.params.names().any(|n| n.starts_with("mlm_head."));
    let mut rng = substream(seed, "masking");
    let policy = MaskingPolicy::default();
    let mut report = ClozeReport { masked: 0, correct: 0 };
    for chunk in sequences.chunks(32) {
        let rows = chunk
            .iter()
            .filter_map(|ids| match apply_mlm_masking(ids, model.vocab_size, &policy, &mut rng) {
                Err(Error::NoMaskableTokens) => None,
                other => Some(other),
            })
            .collect::<Result<Vec<_>>>()?;
        if rows.is_empty() {
            continue;
        }
        let batch = MaskedBatch::from_rows(&rows)?;
        let mut graph = Graph::new(model.precision);
        let mut fwd = Forward::new(&mut graph, &ckpt.params, model, batch.seq_len);
        let base = batch.base_key_block()?;
        let x = embed(&mut fwd, &batch.input_ids)?;
        let h = encoder_forward(&mut fwd, x, &base)?;
        let positions: Vec<usize> = (0..batch.masked.len()).filter(|&i| batch.masked[i]).collect();
        let picked = fwd.graph.gather_rows(h, &positions)?;
        let logits = if with_head {
            crate::bpdec::mlm_head(&mut fwd, picked)?
        } else {
            let e = fwd.param("embeddings.word")?;
            let et = fwd.graph.transpose(e)?;
            fwd.graph.matmul(picked, et)?
        };
        let logits = graph.value(logits);
        for (r, &pos) in positions.iter().enumerate() {
            report.masked += 1;
            report.correct += usize::from(Some(argmax(logits.row(r))) == batch.labels[pos]);
        }
    }
    if report.masked == 0 {
        return Err(Error::NoMaskableTokens);
    }
    Ok(report)
}
