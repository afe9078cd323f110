//! Adam over the flat parameter blocks of a [`MultiTaskModel`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelGrads, MultiTaskModel};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Rescale the full gradient to at most this L2 norm; `None` disables.
    pub max_grad_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 3e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_grad_norm: Some(1.0),
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate.is_finite()
            && self.learning_rate >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.max_grad_norm.is_none_or(|n| n > 0.0);
        if !ok {
            return Err(Error::Config(format!("invalid optimizer settings: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Adam<T> {
    config: AdamConfig,
    m: [Vec<T>; 5],
    v: [Vec<T>; 5],
    step: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, model: &MultiTaskModel<T>) -> Result<Self> {
        config.validate()?;
        let zeros = || model.parts().map(|p| vec![T::zero(); p.len()]);
        Ok(Adam {
            config,
            m: zeros(),
            v: zeros(),
            step: 0,
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. A zero learning rate leaves parameters untouched.
    pub fn step(&mut self, model: &mut MultiTaskModel<T>, grads: &ModelGrads<T>) {
        self.step += 1;
        let c = &self.config;
        let clip = match c.max_grad_norm {
            Some(max) => {
                let norm = grads.norm().as_f64();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let t = self.step as i32;
        let lr = c.learning_rate * (1.0 - c.beta2.powi(t)).sqrt() / (1.0 - c.beta1.powi(t));
        let (b1, b2, eps, lr, clip) = (T::of(c.beta1), T::of(c.beta2), T::of(c.epsilon), T::of(lr), T::of(clip));
        let one = T::one();
        for (((params, g), m), v) in model.parts_mut().into_iter().zip(&grads.parts).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..params.len() {
                let gi = g[i] * clip;
                m[i] = b1 * m[i] + (one - b1) * gi;
                v[i] = b2 * v[i] + (one - b2) * gi * gi;
                params[i] -= lr * m[i] / (v[i].sqrt() + eps);
            }
        }
    }
}
