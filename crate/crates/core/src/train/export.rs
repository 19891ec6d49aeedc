use std::collections::BTreeMap;

use super::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::tensor::ParamStore;
use crate::transformer::{is_encoder_param, param_layout, ParamScope};

/// Checks that `params` holds exactly the layout of `config` in `scope`.
pub(crate) fn check_layout(
    params: &ParamStore,
    config: &crate::config::ModelConfig,
    scope: ParamScope,
) -> Result<()> {
    let layout = param_layout(config, scope);
    if layout.len() != params.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} parameters for this config, found {}",
            layout.len(),
            params.len()
        )));
    }
    for spec in layout {
        let t = params
            .get(&spec.name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {}", spec.name)))?;
        if t.shape() != spec.shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "parameter {} has shape {:?}, config implies {:?}",
                spec.name,
                t.shape(),
                spec.shape
            )));
        }
    }
    Ok(())
}

/// Whether `ckpt` holds a complete pretraining store (embeddings, encoder,
/// decoder if any, MLM head) rather than an encoder-only one.
pub fn has_pretraining_head(ckpt: &Checkpoint) -> bool {
    ckpt.params.names().any(|n| n.starts_with("mlm_head."))
}

/// Drops the decoder and every MLM-head parameter, leaving embeddings and
/// encoder, and rewrites the config to a plain encoder. Optimizer, RNG and
/// data-stream state are dropped too. Exporting an export is a no-op.
pub fn export_encoder(ckpt: &Checkpoint) -> Result<Checkpoint> {
    let model = &ckpt.config.model;
    model.validate()?;
    if has_pretraining_head(ckpt) {
        check_layout(&ckpt.params, model, ParamScope::Full)?;
    } else {
        if model.decoder_layers > 0 {
            return Err(Error::Checkpoint(
                "config has decoder layers but the store has no pretraining parameters".into(),
            ));
        }
        check_layout(&ckpt.params, model, ParamScope::EncoderOnly)?;
    }
    let mut params = ckpt.params.clone();
    params.retain(is_encoder_param);
    let mut config = ckpt.config.clone();
    config.model = model.encoder_only();
    Ok(Checkpoint {
        config,
        step: ckpt.step,
        params,
        adam: None,
        rngs: BTreeMap::new(),
        stream: None,
    })
}

/// Rejects stores that still carry decoder parameters.
pub(crate) fn require_no_decoder(ckpt: &Checkpoint) -> Result<()> {
    let decoder: Vec<&str> = ckpt.params.names().filter(|n| n.starts_with("decoder.")).collect();
    if ckpt.config.model.decoder_layers > 0 || !decoder.is_empty() {
        let what = if decoder.is_empty() {
            format!("decoder_layers = {}", ckpt.config.model.decoder_layers)
        } else {
            format!("{} decoder tensors such as {}", decoder.len(), decoder[0])
        };
        return Err(Error::NotEncoderOnly(what));
    }
    Ok(())
}
