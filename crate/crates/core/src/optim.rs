//! Adam with optional decoupled weight decay, shared by the CNN trainer and
//! the logistic-regression head.

use alloc::vec;
use alloc::vec::Vec;

use libm::{pow, sqrt};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates for a fixed list of parameter tensors.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u32,
}

impl Adam {
    /// `sizes[i]` is the length of tensor `i`.
    pub fn new(sizes: &[usize]) -> Self {
        Adam {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u32 {
        self.t
    }

    /// One update. `decay[i]` scales the decoupled weight decay of tensor `i`
    /// (`p -= lr * weight_decay * p`), so biases and frontend parameters can
    /// opt out.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64, weight_decay: f64, decay: &[bool]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let bias1 = 1.0 - pow(ADAM_BETA1, self.t as f64);
        let bias2 = 1.0 - pow(ADAM_BETA2, self.t as f64);
        for i in 0..params.len() {
            let (p, g) = (&mut *params[i], grads[i]);
            assert_eq!(p.len(), g.len());
            let wd = if decay.get(i).copied().unwrap_or(false) { weight_decay } else { 0.0 };
            for (((p, &g), m), v) in p.iter_mut().zip(g).zip(&mut self.m[i]).zip(&mut self.v[i]) {
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                let m_hat = *m / bias1;
                let v_hat = *v / bias2;
                *p -= lr * (m_hat / (sqrt(v_hat) + ADAM_EPS) + wd * *p);
            }
        }
    }
}
