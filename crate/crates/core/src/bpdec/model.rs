use rand::Rng as _;

use super::gua::{plan_unmasking, UnmaskPlan};
use crate::data::MaskedBatch;
use crate::error::{Error, Result};
use crate::rng::{substream, Rng};
use crate::transformer::{embed, encoder_forward, stack_forward, Forward, KeyBlock, Stack};
use crate::tensor::Var;

/// Runs the decoder stack on top of the encoder output.
///
/// Decoder layer `l` uses `base_block` with the positions of `plan.layer(l)`
/// lifted; padding is never lifted. With zero decoder layers this returns
/// `h_enc` unchanged.
pub fn decoder_forward(
    fwd: &mut Forward<'_>,
    h_enc: Var,
    base_block: &KeyBlock,
    pad: &[bool],
    plan: &UnmaskPlan,
) -> Result<Var> {
    let layers = fwd.config.decoder_layers;
    if plan.num_layers() != layers {
        return Err(Error::InvalidRequest(format!(
            "unmask plan has {} layers, decoder has {layers}",
            plan.num_layers()
        )));
    }
    let blocks: Vec<KeyBlock> = (0..layers)
        .map(|l| base_block.lift(plan.layer(l), pad))
        .collect();
    let refs: Vec<&KeyBlock> = blocks.iter().collect();
    stack_forward(fwd, h_enc, Stack::Decoder, &refs).map(|(h, _)| h)
}

/// Probability that a sequence feeds the MLM head from the decoder.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MixPolicy {
    pub p_decoder: f64,
}

impl MixPolicy {
    pub fn new(p_decoder: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p_decoder) {
            return Err(Error::InvalidMixProb(p_decoder));
        }
        Ok(Self { p_decoder })
    }

    /// One Bernoulli draw per sequence; `true` selects the decoder.
    pub fn draw(&self, sequences: usize, rng: &mut Rng) -> Vec<bool> {
        (0..sequences)
            .map(|_| rng.random::<f64>() < self.p_decoder)
            .collect()
    }
}

/// Per-sequence selection between encoder and decoder outputs.
/// `draws[b]` picks the decoder rows of sequence `b`.
pub fn mix_outputs(
    fwd: &mut Forward<'_>,
    h_enc: Var,
    h_dec: Var,
    draws: &[bool],
) -> Result<Var> {
    let (se, sd) = (fwd.graph.shape(h_enc).to_vec(), fwd.graph.shape(h_dec).to_vec());
    if se != sd {
        return Err(Error::ShapeMismatch {
            op: "mix_outputs",
            left: se,
            right: sd,
        });
    }
    let s = fwd.seq_len;
    if draws.len() * s != se[0] {
        return Err(Error::InvalidRequest(format!(
            "{} mix draws for {} rows of length-{s} sequences",
            draws.len(),
            se[0]
        )));
    }
    if draws.iter().all(|&d| d) {
        return Ok(h_dec);
    }
    if draws.iter().all(|&d| !d) {
        return Ok(h_enc);
    }
    let mut parts = Vec::with_capacity(draws.len());
    for (b, &dec) in draws.iter().enumerate() {
        let src = if dec { h_dec } else { h_enc };
        parts.push(fwd.graph.slice_rows(src, b * s, s)?);
    }
    fwd.graph.concat_rows(&parts)
}

/// `LN(GELU(h W + b)) E^T + bias`, with `E` the input word embeddings.
pub fn mlm_head(fwd: &mut Forward<'_>, h: Var) -> Result<Var> {
    let w = fwd.param("mlm_head.transform.w")?;
    let b = fwd.param("mlm_head.transform.b")?;
    let t = fwd.graph.matmul(h, w)?;
    let t = fwd.graph.add_row(t, b)?;
    let t = fwd.graph.gelu(t);
    let gamma = fwd.param("mlm_head.ln.gamma")?;
    let beta = fwd.param("mlm_head.ln.beta")?;
    let t = fwd.graph.layer_norm(t, gamma, beta, fwd.config.layer_norm_eps)?;
    let e = fwd.param("embeddings.word")?;
    let et = fwd.graph.transpose(e)?;
    let logits = fwd.graph.matmul(t, et)?;
    let bias = fwd.param("mlm_head.bias")?;
    fwd.graph.add_row(logits, bias)
}

/// Random streams consumed by one pretraining forward pass.
#[derive(Clone, Debug)]
pub struct StepRngs {
    pub gua: Rng,
    pub mix: Rng,
}

impl StepRngs {
    pub fn new(seed: u64) -> Self {
        Self {
            gua: substream(seed, "gua"),
            mix: substream(seed, "mix"),
        }
    }
}

/// What the stochastic parts of a pretraining step decided.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct StepDiagnostics {
    /// Unmasked positions summed over the batch, per decoder layer.
    pub unmask_counts: Vec<usize>,
    /// Per-sequence decoder selection; empty without a decoder.
    pub mix_draws: Vec<bool>,
    pub num_masked: usize,
}

/// Loss over the masked positions of `rows` (the MLM head only runs there).
fn masked_lm_loss(fwd: &mut Forward<'_>, h: Var, batch: &MaskedBatch) -> Result<Var> {
    let rows: Vec<usize> = (0..batch.masked.len()).filter(|&i| batch.masked[i]).collect();
    if rows.is_empty() {
        return Err(Error::NoActivePositions);
    }
    let labels: Vec<usize> = rows
        .iter()
        .map(|&i| batch.labels[i].ok_or(Error::NoActivePositions))
        .collect::<Result<_>>()?;
    let picked = fwd.graph.gather_rows(h, &rows)?;
    let logits = mlm_head(fwd, picked)?;
    fwd.graph.cross_entropy_masked(logits, &labels, &vec![true; rows.len()])
}

/// Full BPDec forward: embed, encoder, GUA plan, decoder, output mixing,
/// MLM head and masked cross-entropy. Without decoder layers no GUA or mix
/// draws are taken and the pass is the baseline's, op for op.
pub fn pretrain_forward_loss(
    fwd: &mut Forward<'_>,
    batch: &MaskedBatch,
    rngs: &mut StepRngs,
) -> Result<(Var, StepDiagnostics)> {
    let base = batch.base_key_block()?;
    let x = embed(fwd, &batch.input_ids)?;
    let h_enc = encoder_forward(fwd, x, &base)?;
    let mut diag = StepDiagnostics {
        num_masked: batch.num_masked(),
        ..Default::default()
    };
    let h_out = if fwd.config.decoder_layers == 0 {
        h_enc
    } else {
        let plan = plan_unmasking(
            &batch.masked,
            batch.seq_len,
            &fwd.config.gua_schedule,
            fwd.config.decoder_layers,
            &mut rngs.gua,
        )?;
        diag.unmask_counts = plan.counts();
        let h_dec = decoder_forward(fwd, h_enc, &base, &batch.pad, &plan)?;
        let draws = MixPolicy::new(fwd.config.mix_decoder_prob)?.draw(batch.batch_size, &mut rngs.mix);
        let out = mix_outputs(fwd, h_enc, h_dec, &draws)?;
        diag.mix_draws = draws;
        out
    };
    let loss = masked_lm_loss(fwd, h_out, batch)?;
    Ok((loss, diag))
}

/// The control model: vanilla BERT MLM over the encoder alone. Decoder
/// parameters, if present, are ignored.
pub fn baseline_forward_loss(fwd: &mut Forward<'_>, batch: &MaskedBatch) -> Result<Var> {
    let base = batch.base_key_block()?;
    let x = embed(fwd, &batch.input_ids)?;
    let h = encoder_forward(fwd, x, &base)?;
    masked_lm_loss(fwd, h, batch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bpdec::GuaSchedule;
    use crate::config::ModelConfig;
    use crate::data::{apply_mlm_masking, MaskingPolicy, CLS, PAD, SEP};
    use crate::tensor::{finite_diff_check, DType, Graph, ParamStore, Tensor};
    use crate::train::init_params;
    use crate::transformer::ParamScope;

    fn setup(c: &ModelConfig) -> ParamStore {
        init_params(c, ParamScope::Full, 21).unwrap()
    }

    fn batch(c: &ModelConfig, n: usize, seed: u64) -> MaskedBatch {
        let s = c.max_seq_len;
        let mut rng = substream(seed, "masking");
        let rows: Vec<_> = (0..n)
            .map(|b| {
                let mut ids = vec![CLS];
                ids.extend((0..s - 3).map(|i| 5 + (b * 7 + i * 3) % (c.vocab_size - 5)));
                ids.push(SEP);
                ids.push(PAD);
                let policy = MaskingPolicy {
                    select_rate: 0.4,
                    ..Default::default()
                };
                apply_mlm_masking(&ids, c.vocab_size, &policy, &mut rng).unwrap()
            })
            .collect();
        MaskedBatch::from_rows(&rows).unwrap()
    }

    /// Decoder output for a perturbed constant encoder output.
    fn decoder_rows(c: &ModelConfig, p: &ParamStore, b: &MaskedBatch, plan: &UnmaskPlan, bump: Option<usize>) -> Tensor {
        let mut rng = substream(3, "test");
        let rows = b.input_ids.len();
        let mut h: Vec<f64> = (0..rows * c.hidden).map(|_| rng.random::<f64>() - 0.5).collect();
        if let Some(pos) = bump {
            h[pos * c.hidden] += 0.5;
        }
        let mut g = Graph::new(DType::F64);
        let mut fwd = Forward::new(&mut g, p, c, b.seq_len);
        let hv = fwd.graph.constant(Tensor::new(vec![rows, c.hidden], h).unwrap());
        let out = decoder_forward(&mut fwd, hv, &b.base_key_block().unwrap(), &b.pad, plan).unwrap();
        g.value(out).clone()
    }

    #[test]
    fn empty_decoder_passes_encoder_through() {
        let mut c = ModelConfig::tiny();
        c.decoder_layers = 0;
        c.gua_schedule = GuaSchedule::empty();
        let p = setup(&c);
        let b = batch(&c, 2, 1);
        let plan = UnmaskPlan::none(0, b.masked.len());
        let mut g = Graph::new(DType::F64);
        let mut fwd = Forward::new(&mut g, &p, &c, b.seq_len);
        let hv = fwd.graph.constant(Tensor::ones(&[b.masked.len(), c.hidden]));
        let out = decoder_forward(&mut fwd, hv, &b.base_key_block().unwrap(), &b.pad, &plan).unwrap();
        assert_eq!(out, hv);
    }

    #[test]
    fn empty_plan_is_an_extra_encoder_layer() {
        let c = ModelConfig::tiny();
        let p = setup(&c);
        let b = batch(&c, 2, 2);
        let plan = UnmaskPlan::none(1, b.masked.len());
        let got = decoder_rows(&c, &p, &b, &plan, None);
        // same input through a block with the decoder's weights and the base block
        let mut rng = substream(3, "test");
        let rows = b.input_ids.len();
        let h: Vec<f64> = (0..rows * c.hidden).map(|_| rng.random::<f64>() - 0.5).collect();
        let mut g = Graph::new(DType::F64);
        let mut fwd = Forward::new(&mut g, &p, &c, b.seq_len);
        let hv = fwd.graph.constant(Tensor::new(vec![rows, c.hidden], h).unwrap());
        let out =
            crate::transformer::transformer_block(&mut fwd, hv, &b.base_key_block().unwrap(), "decoder.layer.0").unwrap();
        assert_eq!(g.value(out), &got);
    }

    #[test]
    fn unmasking_lets_information_flow_from_masked_positions() {
        let c = ModelConfig::tiny();
        let p = setup(&c);
        let b = batch(&c, 1, 3);
        let pos = b.masked.iter().position(|&m| m).unwrap();
        let others: Vec<usize> = (0..b.seq_len).filter(|&i| i != pos).collect();
        let differs = |plan: &UnmaskPlan| {
            let a = decoder_rows(&c, &p, &b, plan, None);
            let z = decoder_rows(&c, &p, &b, plan, Some(pos));
            others.iter().any(|&i| a.row(i) != z.row(i))
        };
        let none = UnmaskPlan::none(1, b.seq_len);
        let full =
            plan_unmasking(&b.masked, b.seq_len, &c.gua_schedule, 1, &mut substream(0, "gua")).unwrap();
        assert_eq!(full.counts(), vec![b.num_masked()]);
        assert!(!differs(&none));
        assert!(differs(&full));
    }

    #[test]
    fn mix_extremes_are_exact_and_rate_holds() {
        let c = ModelConfig::tiny();
        let p = setup(&c);
        let mut g = Graph::new(DType::F64);
        let mut fwd = Forward::new(&mut g, &p, &c, 2);
        let e = fwd.graph.constant(Tensor::zeros(&[6, c.hidden]));
        let d = fwd.graph.constant(Tensor::ones(&[6, c.hidden]));
        let mut rng = substream(1, "mix");
        let all = MixPolicy::new(1.0).unwrap().draw(3, &mut rng);
        let none = MixPolicy::new(0.0).unwrap().draw(3, &mut rng);
        assert_eq!(mix_outputs(&mut fwd, e, d, &all).unwrap(), d);
        assert_eq!(mix_outputs(&mut fwd, e, d, &none).unwrap(), e);
        let mixed = mix_outputs(&mut fwd, e, d, &[true, false, true]).unwrap();
        let v = g.value(mixed);
        assert_eq!((v.row(0)[0], v.row(2)[0], v.row(4)[0]), (1.0, 0.0, 1.0));

        let draws = MixPolicy::new(0.8).unwrap().draw(10_000, &mut rng);
        let rate = draws.iter().filter(|&&x| x).count() as f64 / 1e4;
        assert!((rate - 0.8).abs() < 0.02, "{rate}");
        assert!(MixPolicy::new(1.1).is_err());
    }

    #[test]
    fn head_is_linear_in_the_tied_embeddings() {
        let c = ModelConfig::tiny();
        let mut p = setup(&c);
        let run = |p: &ParamStore| {
            let mut g = Graph::new(DType::F64);
            let mut fwd = Forward::new(&mut g, p, &c, 3);
            let h = fwd.graph.constant(Tensor::new(vec![3, c.hidden], (0..3 * c.hidden).map(|i| (i as f64).sin()).collect()).unwrap());
            let out = mlm_head(&mut fwd, h).unwrap();
            g.value(out).clone()
        };
        let before = run(&p);
        assert_eq!(before.shape(), &[3, c.vocab_size]);
        let t = 9;
        let e = p.get_mut("embeddings.word").unwrap();
        let h = c.hidden;
        e.data_mut()[t * h..(t + 1) * h].iter_mut().for_each(|x| *x *= 2.0);
        p.get_mut("mlm_head.bias").unwrap().data_mut()[t] = 0.0;
        let after = run(&p);
        for r in 0..3 {
            assert!((after.get2(r, t) - 2.0 * before.get2(r, t)).abs() < 1e-12);
        }
    }

    #[test]
    fn head_gradient_through_tied_embeddings() {
        let c = ModelConfig::tiny();
        let mut p = setup(&c);
        p.retain(|n| n.starts_with("mlm_head.") || n == "embeddings.word");
        let report = finite_diff_check(
            |store, g| {
                let mut fwd = Forward::new(g, store, &c, 4);
                let e = fwd.param("embeddings.word")?;
                let h = fwd.graph.gather_rows(e, &[5, 6, 7, 8])?;
                let logits = mlm_head(&mut fwd, h)?;
                fwd.graph.cross_entropy_masked(logits, &[9, 10, 11, 5], &[true; 4])
            },
            &p,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    fn loss_of(c: &ModelConfig, p: &ParamStore, b: &MaskedBatch, seed: u64) -> (f64, StepDiagnostics) {
        let mut g = Graph::new(DType::F64);
        let mut fwd = Forward::new(&mut g, p, c, b.seq_len);
        let (loss, d) = pretrain_forward_loss(&mut fwd, b, &mut StepRngs::new(seed)).unwrap();
        (g.value(loss).item(), d)
    }

    #[test]
    fn no_decoder_reduces_to_baseline() {
        let c = ModelConfig::tiny().encoder_only();
        let p = setup(&c);
        let b = batch(&c, 3, 4);
        let (loss, d) = loss_of(&c, &p, &b, 1);
        assert!(d.mix_draws.is_empty() && d.unmask_counts.is_empty());
        let mut g = Graph::new(DType::F64);
        let mut fwd = Forward::new(&mut g, &p, &c, b.seq_len);
        let base = baseline_forward_loss(&mut fwd, &b).unwrap();
        assert_eq!(g.value(base).item().to_bits(), loss.to_bits());
    }

    #[test]
    fn frozen_rng_reproduces_loss() {
        let c = ModelConfig::tiny();
        let p = setup(&c);
        let b = batch(&c, 3, 5);
        let (a, da) = loss_of(&c, &p, &b, 9);
        let (z, dz) = loss_of(&c, &p, &b, 9);
        assert_eq!(a.to_bits(), z.to_bits());
        assert_eq!(da, dz);
        assert_eq!(da.unmask_counts, vec![b.num_masked()]);
    }

    #[test]
    fn untrained_loss_is_near_uniform() {
        let mut c = ModelConfig::tiny();
        c.vocab_size = 64;
        let p = setup(&c);
        let b = batch(&c, 8, 6);
        let (loss, _) = loss_of(&c, &p, &b, 2);
        assert!((loss - 64f64.ln()).abs() < 0.3, "{loss}");
    }

    #[test]
    fn full_model_gradients_match_finite_differences() {
        let mut c = ModelConfig::tiny();
        c.gua_schedule = GuaSchedule::new(vec![(1, 1.0)]).unwrap();
        c.mix_decoder_prob = 0.5;
        let p = setup(&c);
        let b = batch(&c, 2, 7);
        let report = finite_diff_check(
            |store, g| {
                let mut fwd = Forward::new(g, store, &c, b.seq_len);
                pretrain_forward_loss(&mut fwd, &b, &mut StepRngs::new(3)).map(|(l, _)| l)
            },
            &p,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }
}
