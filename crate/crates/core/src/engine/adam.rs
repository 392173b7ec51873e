//! Adam updates over the embedding coordinate buffer.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            learning_rate: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }
}

/// First/second moment state with bias correction.
pub struct Adam {
    params: AdamParams,
    m: Array2<f64>,
    v: Array2<f64>,
    step: usize,
}

impl Adam {
    pub fn new(shape: (usize, usize), params: AdamParams) -> Self {
        Adam {
            params,
            m: Array2::zeros(shape),
            v: Array2::zeros(shape),
            step: 0,
        }
    }

    pub fn step(&mut self, coords: &mut Array2<f64>, grad: &Array2<f64>) {
        self.step += 1;
        let AdamParams {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.params;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for ((c, g), (m, v)) in coords
            .iter_mut()
            .zip(grad.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *c -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
}
