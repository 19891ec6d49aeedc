use std::collections::BTreeMap;

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::tensor::{DType, Gradients, ParamStore, Tensor};

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled (AdamW-style) decay; 0 gives plain Adam.
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn from_train(t: &TrainConfig) -> Self {
        Self {
            beta1: t.adam_beta1,
            beta2: t.adam_beta2,
            eps: t.adam_eps,
            weight_decay: t.weight_decay,
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self::from_train(&TrainConfig::default())
    }
}

/// First and second moments per parameter plus the update count.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct AdamState {
    pub step: u64,
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|(n, t)| (n.clone(), Tensor::zeros(t.shape()).to_dtype(t.dtype())))
                .collect()
        };
        Self {
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

/// Linear warmup over `round(warmup_frac * total)` updates, then linear decay.
/// `step` is the 1-based index of the update about to be applied.
pub fn lr_at(step: u64, total: u64, peak: f64, warmup_frac: f64) -> f64 {
    let warm = (warmup_frac * total as f64).round() as u64;
    if step <= warm {
        peak * step as f64 / warm as f64
    } else if total <= warm {
        peak
    } else {
        peak * (total + 1).saturating_sub(step) as f64 / (total - warm) as f64
    }
}

/// One Adam update with bias correction. Every gradient is checked before
/// anything is written, so a rejected step leaves params and state untouched.
pub fn adam_step(
    params: &mut ParamStore,
    state: &mut AdamState,
    grads: &Gradients,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    for (name, p) in params.iter() {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::UnknownParam(format!("no gradient for {name}")))?;
        if g.shape() != p.shape() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                left: p.shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
        if !g.all_finite() {
            return Err(Error::NonFiniteGradient(name.clone()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (name, p) in params.iter_mut() {
        let g = grads.get(name).expect("checked above");
        let dtype: DType = p.dtype();
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(p.shape()).to_dtype(dtype));
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(p.shape()).to_dtype(dtype));
        let (pd, md, vd) = (p.data_mut(), m.data_mut(), v.data_mut());
        for i in 0..pd.len() {
            let gi = g.data()[i];
            md[i] = dtype.round(cfg.beta1 * md[i] + (1.0 - cfg.beta1) * gi);
            vd[i] = dtype.round(cfg.beta2 * vd[i] + (1.0 - cfg.beta2) * gi * gi);
            let mhat = md[i] / bc1;
            let vhat = vd[i] / bc2;
            let update = mhat / (vhat.sqrt() + cfg.eps) + cfg.weight_decay * pd[i];
            pd[i] = dtype.round(pd[i] - lr * update);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(x: f64) -> ParamStore {
        let mut p = ParamStore::new();
        p.insert("x", Tensor::new(vec![1], vec![x]).unwrap()).unwrap();
        p
    }

    fn grad(g: f64) -> Gradients {
        let mut gr = Gradients::default();
        gr.insert("x", Tensor::new(vec![1], vec![g]).unwrap());
        gr
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = one(1.5);
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &mut s, &grad(0.0), 0.1, &AdamConfig::default()).unwrap();
        assert_eq!(p.get("x").unwrap().data(), &[1.5]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn quadratic_converges() {
        // f(x) = (x - 3)^2, minimum at 3
        let mut p = one(-2.0);
        let mut s = AdamState::new(&p);
        let cfg = AdamConfig::default();
        for _ in 0..500 {
            let x = p.get("x").unwrap().data()[0];
            adam_step(&mut p, &mut s, &grad(2.0 * (x - 3.0)), 0.1, &cfg).unwrap();
        }
        assert!((p.get("x").unwrap().data()[0] - 3.0).abs() < 1e-6);
    }

    #[test]
    fn non_finite_rejected_without_side_effects() {
        let mut p = one(1.0);
        let mut s = AdamState::new(&p);
        let err = adam_step(&mut p, &mut s, &grad(f64::NAN), 0.1, &AdamConfig::default());
        assert!(matches!(err, Err(Error::NonFiniteGradient(ref n)) if n == "x"));
        assert_eq!(s.step, 0);
        assert_eq!(p.get("x").unwrap().data(), &[1.0]);
    }

    #[test]
    fn schedule_shape() {
        assert_eq!(lr_at(1, 100, 1.0, 0.1), 0.1);
        assert_eq!(lr_at(10, 100, 1.0, 0.1), 1.0);
        assert_eq!(lr_at(11, 100, 1.0, 0.1), 1.0);
        assert!(lr_at(100, 100, 1.0, 0.1) > 0.0);
        assert!(lr_at(60, 100, 1.0, 0.1) < lr_at(40, 100, 1.0, 0.1));
        assert_eq!(lr_at(1, 1, 0.5, 0.0), 0.5);
    }
}
