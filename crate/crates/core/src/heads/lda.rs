use alloc::vec;
use alloc::vec::Vec;

use libm::log;

use super::linalg::{cholesky, cholesky_solve};
use super::{check_training, LabeledEmbedding};
use crate::{Error, Result};

pub const DEFAULT_SHRINKAGE: f64 = 0.1;

/// Linear discriminant analysis with a shared, shrunken covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct Lda {
    pub n_classes: usize,
    pub dim: usize,
    pub shrinkage: f64,
    /// Row-major `[K x d]`; rows of absent classes are zero.
    pub means: Vec<f64>,
    pub priors: Vec<f64>,
    /// Lower Cholesky factor of the shrunken covariance, `[d x d]`.
    pub cov_cholesky: Vec<f64>,
    coef: Vec<f64>,
    intercept: Vec<f64>,
}

impl Lda {
    /// Rebuilds the discriminant from its stored parts.
    pub fn from_parts(
        n_classes: usize,
        dim: usize,
        shrinkage: f64,
        means: Vec<f64>, priors: Vec<f64>,
        cov_cholesky: Vec<f64>,
    ) -> Result<Self> {
        if means.len() != n_classes * dim || priors.len() != n_classes || cov_cholesky.len() != dim * dim {
            return Err(Error::ShapeMismatch {
                context: "lda parts",
                expected: n_classes * dim,
                actual: means.len(),
            });
        }
        if (0..dim).any(|i| !(cov_cholesky[i * dim + i] > 0.0)) {
            return Err(Error::NotPositiveDefinite);
        }
        let mut coef = vec![0.0; n_classes * dim];
        let mut intercept = vec![f64::NEG_INFINITY; n_classes];
        for c in 0..n_classes {
            if priors[c] <= 0.0 {
                continue;
            }
            let mu = &means[c * dim..(c + 1) * dim];
            let a = cholesky_solve(&cov_cholesky, dim, mu);
            intercept[c] = -0.5 * mu.iter().zip(&a).map(|(m, v)| m * v).sum::<f64>() + log(priors[c]);
            coef[c * dim..(c + 1) * dim].copy_from_slice(&a);
        }
        Ok(Lda {
            n_classes,
            dim,
            shrinkage,
            means,
            priors,
            cov_cholesky,
            coef,
            intercept,
        })
    }

    /// `x' S^-1 mu_c - mu_c' S^-1 mu_c / 2 + ln pi_c`; `-inf` for classes
    /// absent from training.
    pub fn discriminants(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n_classes)
            .map(|c| {
                if self.intercept[c] == f64::NEG_INFINITY {
                    return f64::NEG_INFINITY;
                }
                let a = &self.coef[c * self.dim..(c + 1) * self.dim];
                a.iter().zip(x).map(|(u, v)| u * v).sum::<f64>() + self.intercept[c]
            })
            .collect()
    }
}

/// Pooled within-class covariance (divided by `n - classes present`), shrunk
/// towards `tr(S)/d * I` by `shrinkage`.
pub fn train_lda(data: &[LabeledEmbedding], n_classes: usize, shrinkage: f64) -> Result<Lda> {
    let d = check_training(data, n_classes)?;
    if !(0.0..=1.0).contains(&shrinkage) {
        return Err(Error::invalid("shrinkage", "must lie in [0, 1]"));
    }
    let mut counts = vec![0usize; n_classes];
    let mut means = vec![0.0; n_classes * d];
    for s in data {
        counts[s.label] += 1;
        for (m, x) in means[s.label * d..(s.label + 1) * d].iter_mut().zip(&s.x) {
            *m += x;
        }
    }
    for (c, &n) in counts.iter().enumerate() {
        if n == 1 {
            return Err(Error::invalid(
                "labels",
                alloc::format!("class {c} has a single sample; LDA needs at least 2 per present class"),
            ));
        }
        if n > 0 {
            means[c * d..(c + 1) * d].iter_mut().for_each(|m| *m /= n as f64);
        }
    }
    let present = counts.iter().filter(|&&n| n > 0).count();
    let dof = data.len() - present;
    let mut cov = vec![0.0; d * d];
    let mut centred = vec![0.0; d];
    for s in data {
        let mu = &means[s.label * d..(s.label + 1) * d];
        for ((c, x), m) in centred.iter_mut().zip(&s.x).zip(mu) {
            *c = x - m;
        }
        for i in 0..d {
            for j in 0..=i {
                cov[i * d + j] += centred[i] * centred[j];
            }
        }
    }
    for i in 0..d {
        for j in 0..=i {
            let v = cov[i * d + j] / dof as f64;
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
    }
    let trace: f64 = (0..d).map(|i| cov[i * d + i]).sum();
    for v in cov.iter_mut() {
        *v *= 1.0 - shrinkage;
    }
    for i in 0..d {
        cov[i * d + i] += shrinkage * trace / d as f64;
    }
    let chol = cholesky(&cov, d)?;
    let n = data.len() as f64;
    let priors = counts.iter().map(|&c| c as f64 / n).collect();
    Lda::from_parts(n_classes, d, shrinkage, means, priors, chol)
}
