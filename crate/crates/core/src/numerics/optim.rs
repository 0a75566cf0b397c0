//! First-order optimizers over a [`ParamStore`].

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::numerics::params::{ParamId, ParamStore};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "algorithm")]
pub enum Algorithm {
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Algorithm {
    pub fn adam_default() -> Self {
        Algorithm::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
struct Moments<S> {
    m: Vec<S>,
    v: Vec<S>,
}

/// Optimizer state bound to one parameter store. The step counter advances
/// once per applied step; a step touching any non-finite gradient is rejected
/// without mutating parameters, moments, or the counter.
#[derive(Debug, Clone)]
pub struct Optimizer<S> {
    algorithm: Algorithm,
    learning_rate: f64,
    step_count: u64,
    bound_token: Option<u64>,
    moments: HashMap<u32, Moments<S>>,
}

impl<S: Scalar> Optimizer<S> {
    pub fn new(algorithm: Algorithm, learning_rate: f64) -> Self {
        Optimizer {
            algorithm,
            learning_rate,
            step_count: 0,
            bound_token: None,
            moments: HashMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    /// Adjust the learning rate mid-run (moments and step count persist).
    pub fn set_learning_rate(&mut self, lr: f64) {
        self.learning_rate = lr;
    }

    /// Apply one update using the gradients currently accumulated in `store`.
    /// Gradients are left untouched; the caller resets them.
    pub fn step(&mut self, store: &mut ParamStore<S>) -> Result<()> {
        match self.bound_token {
            None => self.bound_token = Some(store.token()),
            Some(token) => {
                if token != store.token() {
                    return Err(CoreError::InvalidConfig(
                        "optimizer is bound to a different parameter store".into(),
                    ));
                }
            }
        }
        let ids: Vec<ParamId> = store.param_ids().collect();
        for &id in &ids {
            if store.grads(id).iter().any(|g| !g.is_finite()) {
                return Err(CoreError::NonFiniteGradient(store.name_of(id).to_string()));
            }
        }

        let t = self.step_count + 1;
        for &id in &ids {
            let grads = store.grads(id).to_vec();
            match self.algorithm {
                Algorithm::Sgd => {
                    let lr = S::from_f64_lossy(self.learning_rate);
                    let values = store.values_mut(id);
                    for (v, g) in values.iter_mut().zip(&grads) {
                        *v = *v - lr * *g;
                    }
                }
                Algorithm::Adam { beta1, beta2, epsilon } => {
                    let n = grads.len();
                    let slot = self.moments.entry(id.0).or_insert_with(|| Moments {
                        m: vec![S::zero(); n],
                        v: vec![S::zero(); n],
                    });
                    let b1 = S::from_f64_lossy(beta1);
                    let b2 = S::from_f64_lossy(beta2);
                    let eps = S::from_f64_lossy(epsilon);
                    let lr = S::from_f64_lossy(self.learning_rate);
                    let bias1 = S::from_f64_lossy(1.0 - beta1.powi(t as i32));
                    let bias2 = S::from_f64_lossy(1.0 - beta2.powi(t as i32));
                    let values = store.values_mut(id);
                    for k in 0..n {
                        let g = grads[k];
                        slot.m[k] = b1 * slot.m[k] + (S::one() - b1) * g;
                        slot.v[k] = b2 * slot.v[k] + (S::one() - b2) * g * g;
                        let m_hat = slot.m[k] / bias1;
                        let v_hat = slot.v[k] / bias2;
                        values[k] = values[k] - lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        self.step_count = t;
        Ok(())
    }
}
