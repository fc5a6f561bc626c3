use serde::{Deserialize, Serialize};

use super::classifier::Classifier;
use crate::error::{contract, Result};
use crate::numcore::{gaussian_kl, gaussian_kl_grad, reparam_with_noise, softmax_cross_entropy, Gradient, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerLossConfig {
    /// Weight of the KL term.
    pub beta: f64,
}

impl Default for VerLossConfig {
    fn default() -> Self {
        VerLossConfig { beta: 1e-3 }
    }
}

impl VerLossConfig {
    pub fn validate(&self) -> Result<()> {
        contract!(self.beta.is_finite() && self.beta >= 0.0, "beta must be finite and non-negative");
        Ok(())
    }
}

/// A batch of encoder statistics with the noise used to sample from them.
#[derive(Clone, Debug)]
pub struct VerBatch {
    pub mu: Matrix,
    pub log_sigma: Matrix,
    pub eps: Matrix,
}

impl VerBatch {
    pub fn z(&self) -> Matrix {
        let mut out = Matrix::zeros(self.mu.rows(), self.mu.cols());
        for r in 0..self.mu.rows() {
            let z = reparam_with_noise(self.mu.row(r), self.log_sigma.row(r), self.eps.row(r));
            out.row_mut(r).copy_from_slice(&z);
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct VerLossOutput {
    pub loss: f64,
    pub cross_entropy: f64,
    pub kl: f64,
    pub classifier_grad: Gradient,
    pub grad_mu: Matrix,
    pub grad_log_sigma: Matrix,
}

/// Batch-mean of `CE(classify(z), y) + beta * KL(N(mu, sigma) || N(0, I))`
/// with `z = mu + sigma ⊙ eps`.
///
/// The `log σ` gradient collects both the cross-entropy path through the
/// sample and the KL term.
pub fn ver_loss(batch: &VerBatch, labels: &[usize], classifier: &Classifier, cfg: &VerLossConfig) -> Result<VerLossOutput> {
    cfg.validate()?;
    let (n, d) = (batch.mu.rows(), batch.mu.cols());
    contract!(
        batch.log_sigma.rows() == n && batch.log_sigma.cols() == d && batch.eps.rows() == n && batch.eps.cols() == d,
        "mu, log_sigma and eps must share one shape"
    );
    contract!(labels.len() == n, "{n} examples but {} labels", labels.len());
    let z = batch.z();
    let (logits, cache) = classifier.forward(&z)?;
    let (ce, g_logits) = softmax_cross_entropy(&logits, labels)?;
    let (classifier_grad, g_z) = classifier.backward(&cache, &g_logits)?;

    let inv_n = 1.0 / n.max(1) as f64;
    let mut kl = 0.0;
    let mut grad_mu = g_z.clone();
    let mut grad_log_sigma = Matrix::zeros(n, d);
    for r in 0..n {
        let (mu, ls, eps) = (batch.mu.row(r), batch.log_sigma.row(r), batch.eps.row(r));
        kl += gaussian_kl(mu, ls);
        let (kg_mu, kg_ls) = gaussian_kl_grad(mu, ls);
        let gz = g_z.row(r);
        let gm = grad_mu.row_mut(r);
        for j in 0..d {
            gm[j] += cfg.beta * inv_n * kg_mu[j];
        }
        let gl = grad_log_sigma.row_mut(r);
        for j in 0..d {
            gl[j] = gz[j] * ls[j].exp() * eps[j] + cfg.beta * inv_n * kg_ls[j];
        }
    }
    kl *= inv_n;
    Ok(VerLossOutput {
        loss: ce + cfg.beta * kl,
        cross_entropy: ce,
        kl,
        classifier_grad,
        grad_mu,
        grad_log_sigma,
    })
}
