use alloc::vec;
use alloc::vec::Vec;

use libm::{exp, log};

use super::{check_training, LabeledEmbedding};
use crate::optim::Adam;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct LogRegConfig {
    /// Coefficient of `(lambda / 2) * ||W||^2`; biases are not penalized.
    pub l2_lambda: f64,
    /// Stop once the largest absolute gradient entry falls below this.
    pub tol: f64,
    pub max_iters: usize,
    /// Initial Adam step size, halved whenever a step increases the loss.
    pub learning_rate: f64,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        LogRegConfig {
            l2_lambda: 1e-4,
            tol: 1e-6,
            max_iters: 10_000,
            learning_rate: 0.1,
        }
    }
}

/// Multinomial logistic regression, `logits = W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogReg {
    pub n_classes: usize,
    pub dim: usize,
    /// Row-major `[K x d]`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    /// Iterations run and the objective reached.
    pub iterations: usize,
    pub loss: f64,
}

impl LogReg {
    pub fn zeros(n_classes: usize, dim: usize) -> Self {
        LogReg {
            n_classes,
            dim,
            weights: vec![0.0; n_classes * dim],
            bias: vec![0.0; n_classes],
            iterations: 0,
            loss: f64::NAN,
        }
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n_classes)
            .map(|k| {
                let w = &self.weights[k * self.dim..(k + 1) * self.dim];
                self.bias[k] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }

    /// Mean cross-entropy plus the L2 penalty.
    pub fn objective(&self, data: &[LabeledEmbedding], l2_lambda: f64) -> f64 {
        objective_and_grad(&self.weights, &self.bias, data, self.n_classes, self.dim, l2_lambda, false).0
    }
}

fn objective_and_grad(
    w: &[f64],
    b: &[f64],
    data: &[LabeledEmbedding],
    k: usize,
    d: usize,
    lambda: f64,
    want_grad: bool,
) -> (f64, Vec<f64>, Vec<f64>) {
    let mut gw = if want_grad { vec![0.0; k * d] } else { Vec::new() };
    let mut gb = if want_grad { vec![0.0; k] } else { Vec::new() };
    let mut loss = 0.0;
    let mut z = vec![0.0; k];
    for s in data {
        for (c, zc) in z.iter_mut().enumerate() {
            *zc = b[c] + w[c * d..(c + 1) * d].iter().zip(&s.x).map(|(a, x)| a * x).sum::<f64>();
        }
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|&v| exp(v - max)).sum();
        let lse = max + log(sum);
        loss += lse - z[s.label];
        if want_grad {
            for c in 0..k {
                let g = exp(z[c] - lse) - (c == s.label) as u8 as f64;
                gb[c] += g;
                for (gwj, xj) in gw[c * d..(c + 1) * d].iter_mut().zip(&s.x) {
                    *gwj += g * xj;
                }
            }
        }
    }
    let n = data.len() as f64;
    let penalty: f64 = w.iter().map(|v| v * v).sum::<f64>() * lambda / 2.0;
    if want_grad {
        for (g, wj) in gw.iter_mut().zip(w) {
            *g = *g / n + lambda * wj;
        }
        gb.iter_mut().for_each(|g| *g /= n);
    }
    (loss / n + penalty, gw, gb)
}

/// Full-batch Adam on the penalized mean cross-entropy. A step that raises
/// the objective is undone and the step size halved.
pub fn train_logreg(data: &[LabeledEmbedding], n_classes: usize, config: &LogRegConfig) -> Result<LogReg> {
    let d = check_training(data, n_classes)?;
    let first = data[0].label;
    if data.iter().all(|s| s.label == first) {
        return Err(Error::invalid("labels", "logistic regression needs at least two distinct classes"));
    }
    if !(config.l2_lambda >= 0.0) || !(config.tol > 0.0) || !(config.learning_rate > 0.0) {
        return Err(Error::invalid("logreg config", "lambda >= 0, tol > 0 and learning_rate > 0 required"));
    }
    let k = n_classes;
    let mut model = LogReg::zeros(k, d);
    let mut adam = Adam::new(&[k * d, k]);
    let mut lr = config.learning_rate;
    let (mut loss, mut gw, mut gb) = objective_and_grad(&model.weights, &model.bias, data, k, d, config.l2_lambda, true);
    let mut iterations = 0;
    while iterations < config.max_iters {
        let max_grad = gw.iter().chain(&gb).fold(0.0f64, |m, g| m.max(g.abs()));
        if max_grad < config.tol || lr < config.learning_rate * 1e-12 {
            break;
        }
        iterations += 1;
        let (old_w, old_b) = (model.weights.clone(), model.bias.clone());
        adam.step(&mut [&mut model.weights, &mut model.bias], &[&gw, &gb], lr, 0.0, &[false, false]);
        let (new_loss, new_gw, new_gb) =
            objective_and_grad(&model.weights, &model.bias, data, k, d, config.l2_lambda, true);
        if new_loss > loss {
            model.weights = old_w;
            model.bias = old_b;
            lr /= 2.0;
        } else {
            loss = new_loss;
            gw = new_gw;
            gb = new_gb;
        }
    }
    model.iterations = iterations;
    model.loss = loss;
    Ok(model)
}
