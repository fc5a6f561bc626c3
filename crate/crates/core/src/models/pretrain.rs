use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::classifier::{Classifier, ClassifierSpec};
use super::encoder::{Encoder, EncoderHead, EncoderKind, EncoderSpec};
use super::ver::{ver_loss, VerBatch, VerLossConfig};
use crate::datasets::LabeledSet;
use crate::error::{contract, Result};
use crate::numcore::{softmax_cross_entropy, Matrix, RngStream};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub loss: VerLossConfig,
    /// Fraction of the first task's training set reserved for the encoder and
    /// withheld from clients. Zero trains on the whole first task.
    #[serde(default)]
    pub heldout: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 5,
            lr: 0.05,
            batch_size: 32,
            loss: VerLossConfig::default(),
            heldout: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub loss: f64,
    pub cross_entropy: f64,
    pub kl: f64,
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    /// The frozen encoder. Nothing downstream mutates it.
    pub encoder: Encoder,
    /// The auxiliary head trained jointly with the encoder.
    pub head: Classifier,
    pub history: Vec<EpochLog>,
}

/// Trains an encoder end-to-end with a classification head on `data`.
///
/// Random-projection encoders are returned exactly as initialised.
pub fn pretrain_encoder(
    data: &LabeledSet,
    spec: EncoderSpec,
    head_spec: ClassifierSpec,
    cfg: &PretrainConfig,
    rng: &mut RngStream,
) -> Result<PretrainOutcome> {
    contract!(!data.is_empty(), "pretraining data is empty");
    contract!(
        data.shape().len() == spec.input.len(),
        "pretraining images have {} values, encoder expects {}",
        data.shape().len(),
        spec.input.len()
    );
    contract!(
        head_spec.input_dim == spec.embed_dim,
        "head input {} does not match embedding dimension {}",
        head_spec.input_dim,
        spec.embed_dim
    );
    contract!(cfg.batch_size > 0, "pretraining batch size must be positive");
    let mut encoder = Encoder::init(spec, &mut rng.fork(0))?;
    let mut head = Classifier::init(head_spec, &mut rng.fork(1))?;
    if spec.kind == EncoderKind::RandomProjection {
        return Ok(PretrainOutcome {
            encoder,
            head,
            history: Vec::new(),
        });
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        let mut acc = EpochLog {
            loss: 0.0,
            cross_entropy: 0.0,
            kl: 0.0,
        };
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let x = data.images().select_rows(chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| data.labels()[i]).collect();
            let (head_out, cache) = encoder.forward(&x)?;
            let (log, enc_grad, head_grad) = match head_out {
                EncoderHead::Gaussian { mu, log_sigma } => {
                    let eps = Matrix::from_vec(
                        mu.rows(),
                        mu.cols(),
                        (0..mu.rows() * mu.cols()).map(|_| rng.standard_normal()).collect(),
                    )?;
                    let batch = VerBatch { mu, log_sigma, eps };
                    let out = ver_loss(&batch, &y, &head, &cfg.loss)?;
                    let g = encoder.backward(&cache, &[&out.grad_mu, &out.grad_log_sigma])?;
                    (
                        EpochLog {
                            loss: out.loss,
                            cross_entropy: out.cross_entropy,
                            kl: out.kl,
                        },
                        g,
                        out.classifier_grad,
                    )
                }
                EncoderHead::Point(z) => {
                    let (logits, hc) = head.forward(&z)?;
                    let (ce, gl) = softmax_cross_entropy(&logits, &y)?;
                    let (hg, gz) = head.backward(&hc, &gl)?;
                    let g = encoder.backward(&cache, &[&gz])?;
                    (
                        EpochLog {
                            loss: ce,
                            cross_entropy: ce,
                            kl: 0.0,
                        },
                        g,
                        hg,
                    )
                }
            };
            encoder.params_mut().axpy(-cfg.lr, &enc_grad)?;
            head.params_mut().axpy(-cfg.lr, &head_grad)?;
            acc.loss += log.loss;
            acc.cross_entropy += log.cross_entropy;
            acc.kl += log.kl;
            batches += 1;
        }
        let b = batches.max(1) as f64;
        history.push(EpochLog {
            loss: acc.loss / b,
            cross_entropy: acc.cross_entropy / b,
            kl: acc.kl / b,
        });
        log::debug!("pretrain epoch {}: {:?}", history.len(), history.last());
    }
    Ok(PretrainOutcome {
        encoder,
        head,
        history,
    })
}
