use std::collections::BTreeMap;
use std::fmt;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use super::checkpoint::Checkpoint;
use super::init::init_params;
use super::optim::{adam_step, lr_at, AdamConfig, AdamState};
use crate::bpdec::{baseline_forward_loss, pretrain_forward_loss, StepDiagnostics, StepRngs};
use crate::config::Config;
use crate::data::{BatchStream, MaskingPolicy};
use crate::error::{Error, Result};
use crate::rng::{substream, Rng, RngState};
use crate::tensor::{Graph, ParamStore};
use crate::transformer::{Forward, ParamScope};

/// Which pretraining objective drives the loop.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    /// Encoder, decoder with gradual unmasking, output mixing, MLM head.
    Bpdec,
    /// Control model: encoder and MLM head only; the config's decoder is removed.
    Baseline,
}

/// One line of the metrics file.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRecord {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    pub diagnostics: StepDiagnostics,
}

impl fmt::Display for MetricRecord {
    /// `step=<n> loss=<f> lr=<f> mix_draw=<0|1> unmask_l<k>=<n>...`; the mix
    /// draw is the first sequence's and unmask counts are summed over the batch.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let draw = self.diagnostics.mix_draws.first().copied().unwrap_or(false);
        write!(f, "step={} loss={} lr={} mix_draw={}", self.step, self.loss, self.lr, u8::from(draw))?;
        for (k, n) in self.diagnostics.unmask_counts.iter().enumerate() {
            write!(f, " unmask_l{}={n}", k + 1)?;
        }
        Ok(())
    }
}

/// A pretraining run that can be stepped, checkpointed and resumed.
pub struct Trainer {
    config: Config,
    objective: Objective,
    params: ParamStore,
    adam: AdamState,
    step: u64,
    stream: BatchStream,
    rngs: StepRngs,
    dropout: Rng,
    init: Rng,
}

impl Trainer {
    /// Fresh run from `seed` over pre-encoded sequences of length `train.seq_len`.
    pub fn new(mut config: Config, sequences: Vec<Vec<usize>>, seed: u64, objective: Objective) -> Result<Self> {
        if objective == Objective::Baseline {
            config.model = config.model.encoder_only();
        }
        config.model.validate()?;
        config.train.validate(&config.model)?;
        let params = init_params(&config.model, ParamScope::Full, seed)?;
        let stream = BatchStream::new(
            sequences,
            config.model.vocab_size,
            config.train.batch_size,
            MaskingPolicy::default(),
            seed,
        )?;
        Ok(Self {
            adam: AdamState::new(&params),
            params,
            step: 0,
            stream,
            rngs: StepRngs::new(seed),
            dropout: substream(seed, "dropout"),
            init: substream(seed, "init"),
            config,
            objective,
        })
    }

    /// Continues the run stored in `ckpt` over the same sequences.
    pub fn resume(ckpt: Checkpoint, sequences: Vec<Vec<usize>>, objective: Objective) -> Result<Self> {
        let rng = |name: &str| {
            ckpt.rngs
                .get(name)
                .map(RngState::restore)
                .ok_or_else(|| Error::Checkpoint(format!("missing rng state {name:?}")))
        };
        let adam = ckpt
            .adam
            .clone()
            .ok_or_else(|| Error::Checkpoint("no optimizer state; cannot resume".into()))?;
        let stream_state = ckpt
            .stream
            .ok_or_else(|| Error::Checkpoint("no data stream state; cannot resume".into()))?;
        let mut stream = BatchStream::new(
            sequences,
            ckpt.config.model.vocab_size,
            ckpt.config.train.batch_size,
            MaskingPolicy::default(),
            0,
        )?;
        stream.restore(&stream_state)?;
        Ok(Self {
            rngs: StepRngs {
                gua: rng("gua")?,
                mix: rng("mix")?,
            },
            dropout: rng("dropout")?,
            init: rng("init")?,
            config: ckpt.config,
            objective,
            params: ckpt.params,
            adam,
            step: ckpt.step,
            stream,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// One forward, backward and Adam update.
    pub fn step(&mut self) -> Result<MetricRecord> {
        let batch = self.stream.next_batch()?;
        let model = &self.config.model;
        let mut graph = Graph::new(model.precision);
        let mut fwd = Forward::new(&mut graph, &self.params, model, batch.seq_len);
        if model.hidden_dropout > 0.0 || model.attn_dropout > 0.0 {
            fwd = fwd.with_dropout(&mut self.dropout);
        }
        let (loss, diagnostics) = match self.objective {
            Objective::Bpdec => pretrain_forward_loss(&mut fwd, &batch, &mut self.rngs)?,
            Objective::Baseline => (
                baseline_forward_loss(&mut fwd, &batch)?,
                StepDiagnostics {
                    num_masked: batch.num_masked(),
                    ..Default::default()
                },
            ),
        };
        let loss_value = graph.value(loss).item();
        let next = self.step + 1;
        if !loss_value.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: next,
                loss: loss_value,
            });
        }
        let mut grads = graph.backward(loss)?;
        grads.fill_unreached(&self.params);
        let t = &self.config.train;
        let lr = lr_at(next, t.steps, t.learning_rate, t.warmup_frac);
        adam_step(&mut self.params, &mut self.adam, &grads, lr, &AdamConfig::from_train(t))?;
        self.step = next;
        Ok(MetricRecord {
            step: next,
            loss: loss_value,
            lr,
            diagnostics,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut rngs = BTreeMap::new();
        rngs.insert("gua".to_string(), RngState::capture(&self.rngs.gua));
        rngs.insert("mix".to_string(), RngState::capture(&self.rngs.mix));
        rngs.insert("dropout".to_string(), RngState::capture(&self.dropout));
        rngs.insert("init".to_string(), RngState::capture(&self.init));
        Checkpoint {
            config: self.config.clone(),
            step: self.step,
            params: self.params.clone(),
            adam: Some(self.adam.clone()),
            rngs,
            stream: Some(self.stream.state()),
        }
    }
}

/// Where a run writes its metrics and checkpoints.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub dir: PathBuf,
}

impl RunOutput {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn metrics(&self) -> PathBuf {
        self.dir.join("metrics.txt")
    }

    pub fn final_checkpoint(&self) -> PathBuf {
        self.dir.join("final.ckpt")
    }

    pub fn step_checkpoint(&self, step: u64) -> PathBuf {
        self.dir.join(format!("step-{step:06}.ckpt"))
    }
}

/// Steps `trainer` until `config.train.steps`, appending one metrics line per
/// step and writing periodic plus final checkpoints. Returns the records of
/// this invocation.
pub fn run_pretrain(trainer: &mut Trainer, out: Option<&RunOutput>) -> Result<Vec<MetricRecord>> {
    let total = trainer.config.train.steps;
    let every = trainer.config.train.checkpoint_every;
    let mut metrics = match out {
        Some(o) => Some(
            std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(o.metrics())?,
        ),
        None => None,
    };
    let mut records = Vec::new();
    while trainer.step < total {
        let rec = trainer.step()?;
        if let Some(f) = metrics.as_mut() {
            writeln!(f, "{rec}")?;
        }
        if let Some(o) = out {
            if every > 0 && rec.step % every == 0 && rec.step < total {
                trainer.checkpoint().save(o.step_checkpoint(rec.step))?;
            }
        }
        records.push(rec);
    }
    if let Some(o) = out {
        trainer.checkpoint().save(o.final_checkpoint())?;
    }
    Ok(records)
}

/// Mean loss over the first and last `window` records.
pub fn loss_windows(records: &[MetricRecord], window: usize) -> Option<(f64, f64)> {
    if records.len() < window || window == 0 {
        return None;
    }
    let mean = |r: &[MetricRecord]| r.iter().map(|m| m.loss).sum::<f64>() / r.len() as f64;
    Some((mean(&records[..window]), mean(&records[records.len() - window..])))
}

/// Reads back a metrics file written by [`run_pretrain`].
pub fn read_losses(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .map(|l| {
            l.split_whitespace()
                .find_map(|kv| kv.strip_prefix("loss="))
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::InvalidRequest(format!("bad metrics line {l:?}")))
        })
        .collect()
}
