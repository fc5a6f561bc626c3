use crate::error::Result;
use crate::models::{Classifier, ClassifierSpec, Encoder};
use crate::numcore::{ParamVector, RngStream};
use crate::rehearsal::RehearsalBuffer;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SstConfig {
    pub iters: usize,
    pub batch_size: usize,
    pub lr: f64,
}

/// `iters` SGD steps on batches replayed from the server buffer.
/// An empty buffer or `iters = 0` returns `w` unchanged.
pub fn server_side_training(
    w: &ParamVector,
    spec: &ClassifierSpec,
    buffer: &RehearsalBuffer,
    encoder: &Encoder,
    cfg: &SstConfig,
    rng: &mut RngStream,
) -> Result<ParamVector> {
    if buffer.is_empty() || cfg.iters == 0 {
        return Ok(w.clone());
    }
    let mut clf = Classifier::from_params(*spec, w.clone())?;
    for _ in 0..cfg.iters {
        let (z, y) = buffer.replay(cfg.batch_size, encoder, rng)?;
        let (_, grad) = clf.loss_and_grad(&z, &y)?;
        clf.params_mut().axpy(-cfg.lr, &grad)?;
    }
    Ok(clf.into_params())
}
