use rand_distr::{Distribution, Normal};

use crate::config::ModelConfig;
use crate::error::Result;
use crate::rng::{substream, Rng};
use crate::tensor::{ParamStore, Tensor};
use crate::transformer::{param_layout, Init, ParamScope};

/// Normal(0, std) redrawn until it falls within two standard deviations.
fn truncated_normal(dist: &Normal<f64>, std: f64, rng: &mut Rng) -> f64 {
    loop {
        let x = dist.sample(rng);
        if x.abs() <= 2.0 * std {
            return x;
        }
    }
}

/// Fresh parameters for `config` within `scope`.
///
/// Matrices are truncated-normal with `init_std`, biases zero, LayerNorm
/// gains one. Values come from the `init` substream of `seed`, visiting
/// parameters in name order, so the encoder of a full store differs from an
/// encoder-only store of the same seed.
pub fn init_params(config: &ModelConfig, scope: ParamScope, seed: u64) -> Result<ParamStore> {
    config.validate()?;
    let mut rng = substream(seed, "init");
    let dist = Normal::new(0.0, config.init_std).expect("validated std");
    let mut store = ParamStore::new();
    for spec in param_layout(config, scope) {
        let n: usize = spec.shape.iter().product();
        let t = match spec.init {
            Init::Zeros => Tensor::zeros(&spec.shape),
            Init::Ones => Tensor::ones(&spec.shape),
            Init::Normal => {
                let data = (0..n)
                    .map(|_| truncated_normal(&dist, config.init_std, &mut rng))
                    .collect();
                Tensor::new(spec.shape, data)?
            }
        };
        store.insert(spec.name, t)?;
    }
    store.set_dtype(config.precision);
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_gains_are_one() {
        let c = ModelConfig::tiny();
        let a = init_params(&c, ParamScope::Full, 5).unwrap();
        let b = init_params(&c, ParamScope::Full, 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, init_params(&c, ParamScope::Full, 6).unwrap());
        for (name, t) in a.iter() {
            if name.ends_with(".gamma") {
                assert!(t.data().iter().all(|&x| x == 1.0), "{name}");
            }
            if name.ends_with(".beta") || name.ends_with(".bq") || name.ends_with("bias") {
                assert!(t.data().iter().all(|&x| x == 0.0), "{name}");
            }
        }
    }

    #[test]
    fn matrices_are_truncated() {
        let c = ModelConfig::tiny();
        let p = init_params(&c, ParamScope::Full, 1).unwrap();
        let w = p.get("embeddings.word").unwrap();
        assert!(w.data().iter().all(|x| x.abs() <= 0.04));
        let mean: f64 = w.data().iter().sum::<f64>() / w.numel() as f64;
        assert!(mean.abs() < 0.005);
    }
}
