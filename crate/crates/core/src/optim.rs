//! Adam optimizer over a [`ParamStore`].

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Real;

const BETA1: Real = 0.9;
const BETA2: Real = 0.999;
const EPS: Real = 1e-8;

/// Adam with fixed `beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-8`. Moment
/// buffers live in the store; the optimizer only tracks the step count.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: Real,
    steps: u64,
}

impl Adam {
    pub fn new(lr: Real) -> Self {
        Adam { lr, steps: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Apply one in-place update to every parameter, then zero the grads.
    /// Errors if gradients were never populated via backward.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if !store.grads_ready() {
            return Err(Error::Contract("adam_step called without populated gradients".into()));
        }
        self.steps += 1;
        let t = self.steps as i32;
        let bc1 = 1.0 - BETA1.powi(t);
        let bc2 = 1.0 - BETA2.powi(t);
        for e in store.entries_mut() {
            let grads = e.grad.data_mut();
            let ms = e.m.data_mut();
            let vs = e.v.data_mut();
            let ws = e.value.data_mut();
            for (((w, g), m), v) in ws.iter_mut().zip(grads.iter_mut()).zip(ms).zip(vs) {
                *m = BETA1 * *m + (1.0 - BETA1) * *g;
                *v = BETA2 * *v + (1.0 - BETA2) * *g * *g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + EPS);
                *g = 0.0;
            }
        }
        store.clear_grads_ready();
        Ok(())
    }
}
