use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{ParamStore, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 3e-4,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

/// Adam with decoupled weight decay. Moments are held only for the
/// parameters of the store the state was created from.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    names: Vec<String>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros = || {
            store
                .params()
                .iter()
                .map(|p| Tensor::zeros(p.tensor.shape()))
                .collect::<Vec<_>>()
        };
        AdamState {
            config,
            step: 0,
            names: store.params().iter().map(|p| p.name.clone()).collect(),
            m: zeros(),
            v: zeros(),
        }
    }

    /// Names of the parameters this state tracks, in order.
    pub fn tracked(&self) -> &[String] {
        &self.names
    }

    pub fn first_moment(&self, i: usize) -> &Tensor {
        &self.m[i]
    }

    pub fn second_moment(&self, i: usize) -> &Tensor {
        &self.v[i]
    }

    /// One update. Parameters whose gradient is `None` are left untouched,
    /// moments included. Any non-finite gradient aborts before mutation.
    pub fn apply(&mut self, store: &mut ParamStore, grads: &[Option<Tensor>]) -> Result<()> {
        if grads.len() != self.names.len() || store.len() != self.names.len() {
            return Err(Error::Misaligned(format!(
                "optimizer tracks {} parameters, got {} gradients for a store of {}",
                self.names.len(),
                grads.len(),
                store.len()
            )));
        }
        for (p, g) in store.params().iter().zip(grads) {
            if let Some(g) = g {
                if g.shape() != p.tensor.shape() {
                    return Err(Error::Misaligned(format!("gradient shape for `{}`", p.name)));
                }
                if !g.is_finite() {
                    return Err(Error::NonFiniteGradient(p.name.clone()));
                }
            }
        }
        self.step += 1;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (i, (p, g)) in store.params_mut().iter_mut().zip(grads).enumerate() {
            let Some(g) = g else { continue };
            let decay = 1.0 - c.lr * c.weight_decay;
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (((w, gi), mi), vi) in p
                .tensor
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *w *= decay;
                *mi = c.beta1 * *mi + (1.0 - c.beta1) * gi;
                *vi = c.beta2 * *vi + (1.0 - c.beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::scalar(v));
        s
    }

    #[test]
    fn zero_grad_no_decay_is_identity() {
        let mut store = ParamStore::new();
        store.add("a", Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap());
        let before = store.clone();
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut adam = AdamState::new(&store, cfg);
        adam.apply(&mut store, &[Some(Tensor::zeros(&[3]))]).unwrap();
        assert_eq!(store, before);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m̂ = v̂ = 1 after bias correction, so the step is lr / (1 + eps).
        let mut store = scalar_store(1.0);
        let cfg = AdamConfig {
            lr: 0.1,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
        };
        let mut adam = AdamState::new(&store, cfg);
        adam.apply(&mut store, &[Some(Tensor::scalar(1.0))]).unwrap();
        let expected = 1.0 - 0.1 * 1.0 / (1.0 + 1e-8);
        assert!((store.params()[0].tensor.data()[0] - expected).abs() < 1e-15);
        assert!((store.params()[0].tensor.data()[0] - 0.9).abs() < 1e-8);
    }

    #[test]
    fn decoupled_decay_scales_exactly() {
        let mut store = scalar_store(2.5);
        let cfg = AdamConfig {
            weight_decay: 1e-4,
            ..Default::default()
        };
        let mut adam = AdamState::new(&store, cfg.clone());
        adam.apply(&mut store, &[Some(Tensor::scalar(0.0))]).unwrap();
        assert_eq!(
            store.params()[0].tensor.data()[0],
            2.5 * (1.0 - cfg.lr * cfg.weight_decay)
        );
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut store = scalar_store(1.0);
        let mut adam = AdamState::new(&store, AdamConfig::default());
        let err = adam.apply(&mut store, &[Some(Tensor::scalar(f64::NAN))]).unwrap_err();
        assert!(err.to_string().contains("`w`"));
        assert_eq!(adam.step, 0);
        assert_eq!(store.params()[0].tensor.data()[0], 1.0);
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut store = scalar_store(0.3);
            let mut adam = AdamState::new(&store, AdamConfig::default());
            for k in 0..5 {
                adam.apply(&mut store, &[Some(Tensor::scalar(0.1 * k as f64 - 0.2))])
                    .unwrap();
            }
            store.params()[0].tensor.data()[0].to_bits()
        };
        assert_eq!(run(), run());
    }
}
