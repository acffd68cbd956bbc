use serde::{Deserialize, Serialize};

use super::params::ParamStore;

/// Adam over a flat parameter vector.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64, numel: usize) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; numel],
            v: vec![0.0; numel],
            t: 0,
        }
    }

    /// Moves `params` against `grad` (minimization).
    pub fn descend(&mut self, params: &mut ParamStore, grad: &[f64]) {
        self.apply(params, grad, -1.0);
    }

    /// Moves `params` along `grad` (maximization).
    pub fn ascend(&mut self, params: &mut ParamStore, grad: &[f64]) {
        self.apply(params, grad, 1.0);
    }

    fn apply(&mut self, params: &mut ParamStore, grad: &[f64], sign: f64) {
        assert_eq!(grad.len(), self.m.len(), "optimizer sized for a different network");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let mut flat = params.flatten();
        for i in 0..flat.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            flat[i] += sign * self.lr * mhat / (vhat.sqrt() + self.eps);
        }
        params.unflatten(&flat).expect("length checked above");
    }
}
