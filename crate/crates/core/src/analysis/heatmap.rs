use std::fmt::Write as _;
use std::path::Path;

use crate::bpdec::{decoder_forward, plan_unmasking, UnmaskPlan};
use crate::data::{apply_mlm_masking, MaskedBatch, MaskingPolicy, Vocab};
use crate::error::{Error, Result};
use crate::rng::substream;
use crate::tensor::Graph;
use crate::train::Checkpoint;
use crate::transformer::{embed, encoder_forward, AttentionTrace, Forward, Stack};

/// Which attention heads to dump.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadSelect {
    /// 0-based head index.
    Head(usize),
    Average,
}

/// Per-position role in a heatmap.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PositionKind {
    /// Selected for prediction and still blocked as a key at this layer.
    Masked,
    /// Selected for prediction but revealed by gradual unmasking at this layer.
    Gua,
    Normal,
    Pad,
}

impl PositionKind {
    pub fn name(self) -> &'static str {
        match self {
            PositionKind::Masked => "masked",
            PositionKind::Gua => "gua",
            PositionKind::Normal => "normal",
            PositionKind::Pad => "pad",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapDump {
    pub stack: Stack,
    /// 1-based layer within the stack.
    pub layer: usize,
    pub head: HeadSelect,
    /// `weights[query][key]`.
    pub weights: Vec<Vec<f64>>,
    pub positions: Vec<PositionKind>,
}

fn six_significant(x: f64) -> String {
    if x == 0.0 {
        "0".to_string()
    } else {
        format!("{x:.5e}")
    }
}

impl HeatmapDump {
    /// Header row of key positions, one row of weights per query, then the
    /// annotation row.
    pub fn to_csv(&self) -> String {
        let n = self.positions.len();
        let mut s = String::new();
        let header: Vec<String> = (0..n).map(|i| i.to_string()).collect();
        let _ = writeln!(s, "{}", header.join(","));
        for row in &self.weights {
            let cells: Vec<String> = row.iter().map(|&w| six_significant(w)).collect();
            let _ = writeln!(s, "{}", cells.join(","));
        }
        let notes: Vec<&str> = self.positions.iter().map(|p| p.name()).collect();
        let _ = writeln!(s, "{}", notes.join(","));
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Which layer to dump and how to corrupt the input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HeatmapRequest {
    pub stack: Stack,
    /// 1-based.
    pub layer: usize,
    pub head: HeadSelect,
    pub apply_gua: bool,
    pub seed: u64,
}

/// Attention weights of one layer for one masked input line.
///
/// The line is encoded at the checkpoint's training `seq_len` and corrupted
/// with the `masking` substream of `seed`. With `apply_gua`, decoder layers
/// use an unmasking plan drawn from the `gua` substream of `seed`; without
/// it they keep the encoder's blocking.
pub fn attn_heatmap(ckpt: &Checkpoint, vocab: &Vocab, line: &str, req: &HeatmapRequest) -> Result<HeatmapDump> {
    let HeatmapRequest {
        stack,
        layer,
        head,
        apply_gua,
        seed,
    } = *req;
    let model = &ckpt.config.model;
    let depth = match stack {
        Stack::Encoder => model.encoder_layers,
        Stack::Decoder => model.decoder_layers,
    };
    if stack == Stack::Decoder && depth == 0 {
        return Err(Error::InvalidRequest(
            "checkpoint is encoder-only; it has no decoder layers to dump".into(),
        ));
    }
    if layer == 0 || layer > depth {
        return Err(Error::InvalidRequest(format!(
            "{} layer {layer} outside 1..={depth}",
            stack.name()
        )));
    }
    if let HeadSelect::Head(h) = head {
        if h >= model.heads {
            return Err(Error::InvalidRequest(format!("head {h} outside 0..{}", model.heads)));
        }
    }
    let seq_len = ckpt.config.train.seq_len;
    let ids = vocab.encode_line(line, seq_len)?;
    let row = apply_mlm_masking(&ids, model.vocab_size, &MaskingPolicy::default(), &mut substream(seed, "masking"))?;
    let batch = MaskedBatch::from_rows(&[row])?;
    let base = batch.base_key_block()?;

    let plan = if apply_gua && stack == Stack::Decoder {
        plan_unmasking(
            &batch.masked,
            seq_len,
            &model.gua_schedule,
            model.decoder_layers,
            &mut substream(seed, "gua"),
        )?
    } else {
        UnmaskPlan::none(model.decoder_layers, seq_len)
    };

    let mut trace = AttentionTrace::default();
    let mut graph = Graph::new(model.precision);
    {
        let mut fwd = Forward::new(&mut graph, &ckpt.params, model, seq_len).with_trace(&mut trace);
        let x = embed(&mut fwd, &batch.input_ids)?;
        let h = encoder_forward(&mut fwd, x, &base)?;
        if stack == Stack::Decoder {
            decoder_forward(&mut fwd, h, &base, &batch.pad, &plan)?;
        }
    }
    let traced = trace
        .find(stack, layer)
        .ok_or_else(|| Error::InvalidRequest("layer was not traced".into()))?;
    let heads: Vec<usize> = match head {
        HeadSelect::Head(h) => vec![h],
        HeadSelect::Average => (0..model.heads).collect(),
    };
    let mut weights = vec![vec![0.0; seq_len]; seq_len];
    for &h in &heads {
        let probs = graph.value(traced.probs[0][h]);
        for (q, row) in weights.iter_mut().enumerate() {
            for (k, w) in row.iter_mut().enumerate() {
                *w += probs.row(q)[k];
            }
        }
    }
    let scale = 1.0 / heads.len() as f64;
    weights.iter_mut().flatten().for_each(|w| *w *= scale);

    let revealed = if stack == Stack::Decoder {
        plan.layer(layer - 1).to_vec()
    } else {
        vec![false; seq_len]
    };
    let positions = (0..seq_len)
        .map(|i| {
            if batch.pad[i] {
                PositionKind::Pad
            } else if batch.masked[i] && revealed[i] {
                PositionKind::Gua
            } else if batch.masked[i] {
                PositionKind::Masked
            } else {
                PositionKind::Normal
            }
        })
        .collect();
    Ok(HeatmapDump {
        stack,
        layer,
        head,
        weights,
        positions,
    })
}
