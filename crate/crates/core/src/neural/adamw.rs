//! AdamW: Adam moments with decoupled weight decay.
//!
//! Only parameters present in the gradient map are touched, so freezing a
//! subtree (say, the head during contrastive pretraining) is just omitting
//! its keys. A present-but-zero gradient still applies weight decay.

use std::collections::BTreeMap;

use ndarray::ArrayD;

use crate::error::{Error, Result};
use crate::neural::params::{GradMap, ModelParams};
use crate::neural::real::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::validation("learning rate must be positive"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::validation(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::validation("eps must be positive"));
        }
        if self.weight_decay < 0.0 || !self.weight_decay.is_finite() {
            return Err(Error::validation("weight decay must be finite and non-negative"));
        }
        Ok(())
    }
}

/// First and second moment estimates, created lazily per parameter.
#[derive(Debug, Clone, Default)]
pub struct AdamWState<F: Real> {
    step: u64,
    m: BTreeMap<String, ArrayD<F>>,
    v: BTreeMap<String, ArrayD<F>>,
}

impl<F: Real> AdamWState<F> {
    pub fn new() -> Self {
        AdamWState { step: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One update:
/// `p <- p - lr * m_hat / (sqrt(v_hat) + eps) - lr * weight_decay * p`.
pub fn adamw_step<F: Real>(
    params: &mut ModelParams<F>,
    grads: &GradMap<F>,
    state: &mut AdamWState<F>,
    cfg: &AdamWConfig,
) -> Result<()> {
    cfg.validate()?;
    for (name, g) in grads {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation(format!("non-finite gradient for {name}")));
        }
        if params.entries().get(name).map(|p| p.shape()) != Some(g.shape()) {
            return Err(Error::validation(format!(
                "gradient for {name} does not match a parameter of that shape"
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = F::from_f64(1.0 / (1.0 - cfg.beta1.powi(t)));
    let bc2 = F::from_f64(1.0 / (1.0 - cfg.beta2.powi(t)));
    let (b1, b2) = (F::from_f64(cfg.beta1), F::from_f64(cfg.beta2));
    let one_m_b1 = F::from_f64(1.0 - cfg.beta1);
    let one_m_b2 = F::from_f64(1.0 - cfg.beta2);
    let lr = F::from_f64(cfg.lr);
    let eps = F::from_f64(cfg.eps);
    let decay = F::from_f64(cfg.lr * cfg.weight_decay);

    for (name, g) in grads {
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| ArrayD::zeros(g.raw_dim()));
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| ArrayD::zeros(g.raw_dim()));
        ndarray::Zip::from(&mut *m).and(g).for_each(|m, &g| {
            *m = b1 * *m + one_m_b1 * g;
        });
        ndarray::Zip::from(&mut *v).and(g).for_each(|v, &g| {
            *v = b2 * *v + one_m_b2 * g * g;
        });
        let p = params.get_mut(name);
        ndarray::Zip::from(p).and(&*m).and(&*v).for_each(|p, &m, &v| {
            let m_hat = m * bc1;
            let v_hat = v * bc2;
            *p = *p - lr * m_hat / (v_hat.sqrt() + eps) - decay * *p;
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::params::EncoderConfig;

    fn tiny_params() -> ModelParams<f64> {
        let cfg = EncoderConfig {
            terrain_in: 2,
            terrain_hidden: 2,
            terrain_out: 2,
            rain_hidden: 2,
            rain_out: 2,
            token_dim: 2,
            heads: 1,
            ff_width: 2,
            layers: 1,
            seq_len: 2,
            head_hidden: 2,
        };
        ModelParams::init(&cfg, 0).unwrap()
    }

    #[test]
    fn zero_grads_without_decay_change_nothing() {
        let mut params = tiny_params();
        let before = params.clone();
        let grads = params.zero_grads();
        let mut state = AdamWState::new();
        adamw_step(&mut params, &grads, &mut state, &AdamWConfig::default()).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn zero_grads_with_decay_scale_params() {
        let mut params = tiny_params();
        let before = params.clone();
        let grads = params.zero_grads();
        let mut state = AdamWState::new();
        let cfg = AdamWConfig { lr: 0.1, weight_decay: 0.01, ..AdamWConfig::default() };
        adamw_step(&mut params, &grads, &mut state, &cfg).unwrap();
        for name in before.names() {
            let old = before.get(name);
            let new = params.get(name);
            for (o, n) in old.iter().zip(new.iter()) {
                assert!((n - o * (1.0 - 0.001)).abs() < 1e-15, "{name}");
            }
        }
    }

    #[test]
    fn first_step_moves_by_about_lr() {
        let mut params = tiny_params();
        let name = "head.fc2.bias";
        params.get_mut(name).fill(1.0);
        let mut grads = GradMap::new();
        grads.insert(name.into(), ArrayD::from_elem(vec![1], 1.0));
        let mut state = AdamWState::new();
        let cfg = AdamWConfig { lr: 1e-3, ..AdamWConfig::default() };
        adamw_step(&mut params, &grads, &mut state, &cfg).unwrap();
        let got = params.get(name)[0];
        assert!((got - (1.0 - 1e-3)).abs() < 1e-6, "got {got}");
    }

    #[test]
    fn absent_keys_are_frozen() {
        let mut params = tiny_params();
        let before = params.clone();
        let mut grads = GradMap::new();
        grads.insert("head.fc2.bias".into(), ArrayD::from_elem(vec![1], 0.5));
        let mut state = AdamWState::new();
        let cfg = AdamWConfig { lr: 0.1, weight_decay: 0.01, ..AdamWConfig::default() };
        adamw_step(&mut params, &grads, &mut state, &cfg).unwrap();
        for name in before.names() {
            if name == "head.fc2.bias" {
                assert_ne!(params.get(name), before.get(name));
            } else {
                assert_eq!(params.get(name), before.get(name), "{name} should be frozen");
            }
        }
    }

    #[test]
    fn non_finite_gradient_names_the_layer() {
        let mut params = tiny_params();
        let mut grads = GradMap::new();
        grads.insert("head.fc1.bias".into(), ArrayD::from_elem(vec![2], f64::NAN));
        let mut state = AdamWState::new();
        let err = adamw_step(&mut params, &grads, &mut state, &AdamWConfig::default())
            .unwrap_err()
            .to_string();
        assert!(err.contains("head.fc1.bias"), "error was: {err}");
    }

    #[test]
    fn repeated_steps_converge_a_quadratic() {
        // minimize (p - 3)^2 on a single-parameter key
        let mut params = tiny_params();
        let name = "head.fc2.bias";
        params.get_mut(name).fill(0.0);
        let mut state = AdamWState::new();
        let cfg = AdamWConfig { lr: 0.05, ..AdamWConfig::default() };
        for _ in 0..600 {
            let p = params.get(name)[0];
            let mut grads = GradMap::new();
            grads.insert(name.into(), ArrayD::from_elem(vec![1], 2.0 * (p - 3.0)));
            adamw_step(&mut params, &grads, &mut state, &cfg).unwrap();
        }
        let p = params.get(name)[0];
        assert!((p - 3.0).abs() < 1e-2, "converged to {p}");
    }
}
