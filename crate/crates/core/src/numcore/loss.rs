use super::matrix::Matrix;
use super::rng::RngStream;
use crate::error::{contract, Result};

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    contract!(
        logits.rows() == labels.len(),
        "{} logit rows for {} labels",
        logits.rows(),
        labels.len()
    );
    let k = logits.cols();
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(crate::Error::Contract(format!("label {bad} out of range for {k} classes")));
    }
    let n = labels.len().max(1) as f64;
    let mut grad = Matrix::zeros(logits.rows(), k);
    let mut loss = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        loss += lse - row[y];
        let g = grad.row_mut(r);
        for (gj, &v) in g.iter_mut().zip(row) {
            *gj = (v - lse).exp() / n;
        }
        g[y] -= 1.0 / n;
    }
    Ok((loss / n, grad))
}

/// `D_KL(N(mu, diag(sigma²)) || N(0, I))` with `sigma = exp(log_sigma)`.
pub fn gaussian_kl(mu: &[f64], log_sigma: &[f64]) -> f64 {
    mu.iter()
        .zip(log_sigma)
        .map(|(&m, &ls)| 0.5 * (m * m + (2.0 * ls).exp() - 1.0 - 2.0 * ls))
        .sum()
}

/// Gradients of [`gaussian_kl`] w.r.t. `mu` and `log_sigma`.
pub fn gaussian_kl_grad(mu: &[f64], log_sigma: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let gm = mu.to_vec();
    let gs = log_sigma.iter().map(|&ls| (2.0 * ls).exp() - 1.0).collect();
    (gm, gs)
}

/// `z = mu + exp(log_sigma) ⊙ eps` for a given noise vector.
pub fn reparam_with_noise(mu: &[f64], log_sigma: &[f64], eps: &[f64]) -> Vec<f64> {
    mu.iter()
        .zip(log_sigma)
        .zip(eps)
        .map(|((&m, &ls), &e)| {
            let s = ls.exp();
            if s == 0.0 {
                m
            } else {
                m + s * e
            }
        })
        .collect()
}

/// Draws `eps ~ N(0, I)` and returns `(z, eps)` with `z = mu + sigma ⊙ eps`.
pub fn reparam_sample(mu: &[f64], log_sigma: &[f64], rng: &mut RngStream) -> (Vec<f64>, Vec<f64>) {
    let eps: Vec<f64> = (0..mu.len()).map(|_| rng.standard_normal()).collect();
    (reparam_with_noise(mu, log_sigma, &eps), eps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_k() {
        let logits = Matrix::zeros(3, 10);
        let (loss, _) = softmax_cross_entropy(&logits, &[0, 4, 9]).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn dominant_true_logit_gives_zero_loss() {
        let logits = Matrix::from_rows(&[[1e4, 0.0, -3.0]]).unwrap();
        let (loss, grad) = softmax_cross_entropy(&logits, &[0]).unwrap();
        assert!(loss.abs() < 1e-300);
        assert!(grad.is_finite());
    }

    #[test]
    fn out_of_range_label_is_rejected() {
        assert!(softmax_cross_entropy(&Matrix::zeros(1, 3), &[3]).is_err());
    }

    #[test]
    fn kl_examples() {
        assert_eq!(gaussian_kl(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert!((gaussian_kl(&[1.0], &[0.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn reparam_degenerate_cases() {
        let mu = [0.3, -1.0];
        assert_eq!(reparam_with_noise(&mu, &[0.5, 1.0], &[0.0, 0.0]), mu.to_vec());
        let mut rng = RngStream::new(1, 1);
        let (z, _) = reparam_sample(&mu, &[f64::NEG_INFINITY; 2], &mut rng);
        assert_eq!(z, mu.to_vec());
    }

    #[test]
    fn reparam_is_reproducible() {
        let mut a = RngStream::new(5, 9);
        let mut b = a.clone();
        let x = reparam_sample(&[0.1, 0.2], &[0.0, -1.0], &mut a);
        let y = reparam_sample(&[0.1, 0.2], &[0.0, -1.0], &mut b);
        assert_eq!(x, y);
    }
}
