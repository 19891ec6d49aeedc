//! Python bindings: configs, vocabularies, the pretraining loop, checkpoints
//! and the analysis helpers.
//!
//!     import bpdec
//!     cfg = bpdec.Config.preset("desk")
//!     lines = bpdec.markov_corpus(seed=1, lines=2000)
//!     vocab = bpdec.Vocab.build(lines, cfg.vocab_size)
//!     trainer = bpdec.Trainer(cfg, vocab.encode_all(lines, cfg.seq_len), seed=7)
//!     losses = trainer.run()

use std::collections::HashMap;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use bpdec_core::analysis::{attn_heatmap, flops_estimate, HeadSelect, HeatmapRequest, Phase};
use bpdec_core::bpdec::{plan_unmasking, GuaSchedule};
use bpdec_core::config::{self, ModelConfig};
use bpdec_core::data::{self, synthetic, MaskingPolicy};
use bpdec_core::rng::substream;
use bpdec_core::train::{self, Objective, RunOutput};
use bpdec_core::transformer::{ParamScope, Stack};
use bpdec_core::Error;

fn err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyOSError::new_err(e.to_string()),
        Error::NonFiniteGradient(_) | Error::NonFiniteLoss { .. } | Error::GraphConsumed => {
            PyRuntimeError::new_err(e.to_string())
        }
        other => PyValueError::new_err(other.to_string()),
    }
}

fn preset_model(name: &str) -> PyResult<ModelConfig> {
    match name {
        "tiny" => Ok(ModelConfig::tiny()),
        "desk" => Ok(ModelConfig::desk()),
        "base-h256" => Ok(ModelConfig::base_h256()),
        "base" => Ok(ModelConfig::base()),
        "large" => Ok(ModelConfig::large()),
        _ => Err(PyValueError::new_err(format!("unknown preset {name:?}"))),
    }
}

/// Model plus training settings, as read from a `key = value` config file.
#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: config::Config,
}

#[pymethods]
impl PyConfig {
    /// tiny, desk, base-h256, base or large, with default training settings.
    #[staticmethod]
    fn preset(name: &str) -> PyResult<Self> {
        Ok(Self {
            inner: config::Config::for_model(preset_model(name)?),
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        config::Config::load(path).map(|inner| Self { inner }).map_err(err)
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        config::Config::parse(text).map(|inner| Self { inner }).map_err(err)
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    /// The same encoder with decoder, schedule and mixing removed.
    fn encoder_only(&self) -> Self {
        Self {
            inner: config::Config {
                model: self.inner.model.encoder_only(),
                train: self.inner.train.clone(),
            },
        }
    }

    #[getter]
    fn encoder_layers(&self) -> usize {
        self.inner.model.encoder_layers
    }

    #[getter]
    fn decoder_layers(&self) -> usize {
        self.inner.model.decoder_layers
    }

    #[getter]
    fn hidden(&self) -> usize {
        self.inner.model.hidden
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.inner.model.vocab_size
    }

    #[getter]
    fn seq_len(&self) -> usize {
        self.inner.train.seq_len
    }

    #[getter]
    fn steps(&self) -> u64 {
        self.inner.train.steps
    }

    #[setter]
    fn set_steps(&mut self, steps: u64) {
        self.inner.train.steps = steps;
    }

    #[getter]
    fn batch_size(&self) -> usize {
        self.inner.train.batch_size
    }

    #[setter]
    fn set_batch_size(&mut self, n: usize) {
        self.inner.train.batch_size = n;
    }

    #[getter]
    fn mix_decoder_prob(&self) -> f64 {
        self.inner.model.mix_decoder_prob
    }

    /// `[(layer, rate), ...]`, layers 1-based.
    #[getter]
    fn gua_schedule(&self) -> Vec<(usize, f64)> {
        self.inner.model.gua_schedule.entries().to_vec()
    }

    fn __repr__(&self) -> String {
        let m = &self.inner.model;
        format!(
            "Config(encoder_layers={}, decoder_layers={}, hidden={}, vocab_size={}, steps={})",
            m.encoder_layers, m.decoder_layers, m.hidden, m.vocab_size, self.inner.train.steps
        )
    }
}

/// Word-level vocabulary; ids 0..5 are PAD, UNK, CLS, SEP, MASK.
#[pyclass(name = "Vocab", from_py_object)]
#[derive(Clone)]
struct PyVocab {
    inner: data::Vocab,
}

#[pymethods]
impl PyVocab {
    #[staticmethod]
    fn build(lines: Vec<String>, max_size: usize) -> PyResult<Self> {
        data::Vocab::build(lines.iter().map(String::as_str), max_size)
            .map(|inner| Self { inner })
            .map_err(err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        data::Vocab::load(path).map(|inner| Self { inner }).map_err(err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(err)
    }

    /// `[CLS] words [SEP]` padded to `seq_len`.
    fn encode(&self, line: &str, seq_len: usize) -> PyResult<Vec<usize>> {
        self.inner.encode_line(line, seq_len).map_err(err)
    }

    /// Encodes a whole corpus, truncating long lines.
    fn encode_all(&self, lines: Vec<String>, seq_len: usize) -> PyResult<Vec<Vec<usize>>> {
        data::encode_corpus(lines.iter().map(String::as_str), &self.inner, seq_len)
            .map(|(seqs, _)| seqs)
            .map_err(err)
    }

    fn token(&self, id: usize) -> Option<String> {
        self.inner.token(id).map(str::to_string)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// A saved training state or exported encoder.
#[pyclass(name = "Checkpoint", from_py_object)]
#[derive(Clone)]
struct PyCheckpoint {
    inner: train::Checkpoint,
}

#[pymethods]
impl PyCheckpoint {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        train::Checkpoint::load(path).map(|inner| Self { inner }).map_err(err)
    }

    /// Freshly initialized parameters; `encoder_only` keeps embeddings and encoder.
    #[staticmethod]
    #[pyo3(signature = (config, seed=0, encoder_only=false))]
    fn initial(config: &PyConfig, seed: u64, encoder_only: bool) -> PyResult<Self> {
        let scope = if encoder_only {
            ParamScope::EncoderOnly
        } else {
            ParamScope::Full
        };
        train::Checkpoint::initial(config.inner.clone(), scope, seed)
            .map(|inner| Self { inner })
            .map_err(err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(err)
    }

    fn export_encoder(&self) -> PyResult<Self> {
        train::export_encoder(&self.inner).map(|inner| Self { inner }).map_err(err)
    }

    #[getter]
    fn step(&self) -> u64 {
        self.inner.step
    }

    #[getter]
    fn config(&self) -> PyConfig {
        PyConfig {
            inner: self.inner.config.clone(),
        }
    }

    #[getter]
    fn num_scalars(&self) -> usize {
        self.inner.params.num_scalars()
    }

    fn param_names(&self) -> Vec<String> {
        self.inner.params.names().map(str::to_string).collect()
    }

    /// Values of one parameter, flattened row-major, with its shape.
    fn param(&self, name: &str) -> PyResult<(Vec<usize>, Vec<f64>)> {
        let t = self
            .inner
            .params
            .get(name)
            .ok_or_else(|| PyValueError::new_err(format!("no parameter {name:?}")))?;
        Ok((t.shape().to_vec(), t.data().to_vec()))
    }

    fn __bytes__<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.inner.to_bytes())
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }
}

/// The pretraining loop.
#[pyclass(name = "Trainer", unsendable)]
struct PyTrainer {
    inner: train::Trainer,
}

fn objective(name: &str) -> PyResult<Objective> {
    match name {
        "bpdec" => Ok(Objective::Bpdec),
        "baseline" => Ok(Objective::Baseline),
        _ => Err(PyValueError::new_err(format!(
            "objective must be 'bpdec' or 'baseline', got {name:?}"
        ))),
    }
}

fn record_dict(r: &train::MetricRecord) -> HashMap<String, f64> {
    let mut d = HashMap::from([
        ("step".to_string(), r.step as f64),
        ("loss".to_string(), r.loss),
        ("lr".to_string(), r.lr),
    ]);
    if let Some(&first) = r.diagnostics.mix_draws.first() {
        d.insert("mix_draw".into(), f64::from(u8::from(first)));
    }
    for (l, &n) in r.diagnostics.unmask_counts.iter().enumerate() {
        d.insert(format!("unmask_l{}", l + 1), n as f64);
    }
    d
}

#[pymethods]
impl PyTrainer {
    #[new]
    #[pyo3(signature = (config, sequences, seed=0, objective="bpdec"))]
    fn new(config: &PyConfig, sequences: Vec<Vec<usize>>, seed: u64, objective: &str) -> PyResult<Self> {
        let inner = train::Trainer::new(config.inner.clone(), sequences, seed, self::objective(objective)?)
            .map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (checkpoint, sequences, objective="bpdec"))]
    fn resume(checkpoint: &PyCheckpoint, sequences: Vec<Vec<usize>>, objective: &str) -> PyResult<Self> {
        let inner = train::Trainer::resume(checkpoint.inner.clone(), sequences, self::objective(objective)?)
            .map_err(err)?;
        Ok(Self { inner })
    }

    /// One optimizer step; returns the metrics record as a dict.
    fn step(&mut self) -> PyResult<HashMap<String, f64>> {
        self.inner.step().map(|r| record_dict(&r)).map_err(err)
    }

    /// Trains to the configured step count and returns the losses. With
    /// `out_dir`, writes metrics.txt and checkpoints there.
    #[pyo3(signature = (out_dir=None))]
    fn run(&mut self, py: Python<'_>, out_dir: Option<String>) -> PyResult<Vec<f64>> {
        let out = out_dir.map(RunOutput::new).transpose().map_err(err)?;
        let inner = &mut self.inner;
        let records = py.detach(|| train::run_pretrain(inner, out.as_ref())).map_err(err)?;
        Ok(records.iter().map(|r| r.loss).collect())
    }

    #[getter]
    fn step_count(&self) -> u64 {
        self.inner.step_count()
    }

    fn checkpoint(&self) -> PyCheckpoint {
        PyCheckpoint {
            inner: self.inner.checkpoint(),
        }
    }
}

/// Analytic FLOP report as a dict of the `key: value` lines.
#[pyfunction]
#[pyo3(signature = (config, phase="pretrain", seq_len=None))]
fn flops(config: &PyConfig, phase: &str, seq_len: Option<usize>) -> PyResult<HashMap<String, String>> {
    let phase: Phase = phase.parse().map_err(err)?;
    let m = &config.inner.model;
    let report = flops_estimate(m, phase, seq_len.unwrap_or(m.max_seq_len));
    Ok(report
        .to_text()
        .lines()
        .filter_map(|l| l.split_once(": "))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect())
}

#[pyfunction]
#[pyo3(signature = (seed, lines))]
fn markov_corpus(seed: u64, lines: usize) -> Vec<String> {
    synthetic::markov_corpus(seed, lines)
}

/// `(label, line)` pairs; label 1 iff the marker symbol occurs.
#[pyfunction]
#[pyo3(signature = (seed, lines, marker=7))]
fn marker_task(seed: u64, lines: usize, marker: usize) -> Vec<(usize, String)> {
    synthetic::marker_task(seed, lines, marker)
}

/// Corrupts one sequence with the `masking` substream of `seed`.
#[pyfunction]
fn mask_sequence(ids: Vec<usize>, vocab_size: usize, seed: u64) -> PyResult<HashMap<String, Vec<i64>>> {
    let row = data::apply_mlm_masking(&ids, vocab_size, &MaskingPolicy::default(), &mut substream(seed, "masking"))
        .map_err(err)?;
    let as_i64 = |v: &[usize]| v.iter().map(|&x| x as i64).collect::<Vec<_>>();
    Ok(HashMap::from([
        ("input_ids".to_string(), as_i64(&row.input_ids)),
        ("labels".to_string(), row.labels.iter().map(|l| l.map_or(-1, |x| x as i64)).collect()),
        ("masked".to_string(), row.masked.iter().map(|&m| i64::from(m)).collect()),
    ]))
}

#[pyfunction]
#[pyo3(signature = (sequences, vocab_size, seed=0, tokens=100_000))]
fn mask_stats(sequences: Vec<Vec<usize>>, vocab_size: usize, seed: u64, tokens: usize) -> PyResult<HashMap<String, f64>> {
    let r = data::mask_stats(&sequences, vocab_size, &MaskingPolicy::default(), seed, tokens).map_err(err)?;
    Ok(HashMap::from([
        ("maskable_tokens".to_string(), r.maskable_tokens as f64),
        ("select_rate".to_string(), r.select_rate()),
        ("mask_rate".to_string(), r.mask_rate()),
        ("keep_rate".to_string(), r.keep_rate()),
        ("random_rate".to_string(), r.random_rate()),
    ]))
}

/// Per decoder layer, which positions of `masked` are revealed.
#[pyfunction]
fn plan_gua(masked: Vec<bool>, schedule: Vec<(usize, f64)>, decoder_layers: usize, seed: u64) -> PyResult<Vec<Vec<bool>>> {
    let schedule = GuaSchedule::new(schedule).map_err(err)?;
    let plan = plan_unmasking(&masked, masked.len(), &schedule, decoder_layers, &mut substream(seed, "gua"))
        .map_err(err)?;
    Ok((0..decoder_layers).map(|l| plan.layer(l).to_vec()).collect())
}

/// Finetunes a classifier on an encoder-only checkpoint; returns dev accuracy.
#[pyfunction]
#[pyo3(signature = (checkpoint, vocab, examples, seed=0, epochs=5, learning_rate=1e-3, batch_size=16))]
#[allow(clippy::too_many_arguments)]
fn finetune(
    py: Python<'_>,
    checkpoint: &PyCheckpoint,
    vocab: &PyVocab,
    examples: Vec<(usize, String)>,
    seed: u64,
    epochs: usize,
    learning_rate: f64,
    batch_size: usize,
) -> PyResult<f64> {
    let spec = train::FinetuneTaskSpec {
        num_labels: examples.iter().map(|e| e.0 + 1).max().unwrap_or(2).max(2),
        epochs,
        learning_rate,
        batch_size,
        seq_len: checkpoint.inner.config.train.seq_len,
        ..Default::default()
    };
    let (ckpt, vocab) = (&checkpoint.inner, &vocab.inner);
    py.detach(|| train::finetune_classify(ckpt, vocab, &examples, &spec, seed))
        .map(|r| r.dev_accuracy)
        .map_err(err)
}

#[pyfunction]
#[pyo3(signature = (checkpoint, sequences, seed=0))]
fn eval_cloze(checkpoint: &PyCheckpoint, sequences: Vec<Vec<usize>>, seed: u64) -> PyResult<f64> {
    train::evaluate_cloze(&checkpoint.inner, &sequences, seed)
        .map(|r| r.accuracy())
        .map_err(err)
}

/// `(weights[query][key], position kinds)` for one layer; `head=None` averages.
#[pyfunction]
#[pyo3(signature = (checkpoint, vocab, line, stack="decoder", layer=1, head=None, apply_gua=true, seed=0))]
#[allow(clippy::too_many_arguments)]
fn attention_heatmap(
    checkpoint: &PyCheckpoint,
    vocab: &PyVocab,
    line: &str,
    stack: &str,
    layer: usize,
    head: Option<usize>,
    apply_gua: bool,
    seed: u64,
) -> PyResult<(Vec<Vec<f64>>, Vec<String>)> {
    let stack = match stack {
        "encoder" => Stack::Encoder,
        "decoder" => Stack::Decoder,
        _ => return Err(PyValueError::new_err("stack must be 'encoder' or 'decoder'")),
    };
    let req = HeatmapRequest {
        stack,
        layer,
        head: head.map_or(HeadSelect::Average, HeadSelect::Head),
        apply_gua,
        seed,
    };
    let d = attn_heatmap(&checkpoint.inner, &vocab.inner, line, &req).map_err(err)?;
    Ok((d.weights, d.positions.iter().map(|p| p.name().to_string()).collect()))
}

#[pymodule]
fn bpdec(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyVocab>()?;
    m.add_class::<PyCheckpoint>()?;
    m.add_class::<PyTrainer>()?;
    m.add_function(wrap_pyfunction!(flops, m)?)?;
    m.add_function(wrap_pyfunction!(markov_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(marker_task, m)?)?;
    m.add_function(wrap_pyfunction!(mask_sequence, m)?)?;
    m.add_function(wrap_pyfunction!(mask_stats, m)?)?;
    m.add_function(wrap_pyfunction!(plan_gua, m)?)?;
    m.add_function(wrap_pyfunction!(finetune, m)?)?;
    m.add_function(wrap_pyfunction!(eval_cloze, m)?)?;
    m.add_function(wrap_pyfunction!(attention_heatmap, m)?)?;
    Ok(())
}
