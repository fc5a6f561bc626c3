use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::client::EncodedShard;
use crate::datasets::TaskSequence;
use crate::error::{contract, Result};
use crate::models::{Classifier, ClassifierSpec, Encoder};
use crate::numcore::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OfflineConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for OfflineConfig {
    fn default() -> Self {
        OfflineConfig {
            epochs: 20,
            lr: 0.05,
            batch_size: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OfflineOutcome {
    /// Validation accuracy per task.
    pub accuracy: Vec<f64>,
    pub average: f64,
}

/// Centralised reference: one classifier trained on the frozen-encoder
/// embeddings of every task at once, with minibatch SGD.
pub fn offline_joint_training(
    tasks: &TaskSequence,
    encoder: &Encoder,
    spec: ClassifierSpec,
    cfg: &OfflineConfig,
    rng: &mut RngStream,
) -> Result<OfflineOutcome> {
    contract!(cfg.batch_size >= 1, "batch size must be positive");
    let shards = tasks
        .tasks()
        .iter()
        .map(|t| EncodedShard::encode(t.id, &t.train, encoder, false))
        .collect::<Result<Vec<_>>>()?;
    let mut order: Vec<(usize, usize)> = shards
        .iter()
        .enumerate()
        .flat_map(|(s, sh)| (0..sh.len()).map(move |i| (s, i)))
        .collect();
    contract!(!order.is_empty(), "no training data");
    let mut clf = Classifier::init(spec, &mut rng.fork(0))?;
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size) {
            let mut z = None;
            let mut y = Vec::with_capacity(chunk.len());
            for &(s, i) in chunk {
                let row = shards[s].embed(&[i], rng)?;
                z = Some(match z {
                    None => row,
                    Some(acc) => super::client::vstack(acc, &row)?,
                });
                y.push(shards[s].labels()[i]);
            }
            let (_, grad) = clf.loss_and_grad(&z.expect("chunks are nonempty"), &y)?;
            clf.params_mut().axpy(-cfg.lr, &grad)?;
        }
    }
    let accuracy = tasks
        .tasks()
        .iter()
        .map(|t| Ok(clf.evaluate(&encoder.encode_for_eval(t.val.images())?, t.val.labels())?.0))
        .collect::<Result<Vec<f64>>>()?;
    let average = accuracy.iter().sum::<f64>() / accuracy.len() as f64;
    Ok(OfflineOutcome { accuracy, average })
}
