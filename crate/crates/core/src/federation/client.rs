use rand::seq::index;

use super::config::FLConfig;
use crate::datasets::LabeledSet;
use crate::error::{contract, Result};
use crate::models::{Classifier, ClassifierSpec, Encoder, EncoderHead, EncoderKind, GaussianStats};
use crate::numcore::{reparam_sample, Matrix, ParamVector, RngStream};
use crate::rehearsal::{Payload, PayloadKind, RehearsalBuffer, RehearsalRecord, StrategyKind};
use crate::scenarios::Enrollment;

/// Frozen-encoder view of one client's shard for the current task.
#[derive(Clone, Debug)]
pub struct EncodedShard {
    task: usize,
    labels: Vec<usize>,
    encoded: Encoded,
    /// Kept only when the strategy stores raw samples.
    raw: Option<Matrix>,
}

#[derive(Clone, Debug)]
enum Encoded {
    Points(Matrix),
    Stats { mu: Matrix, log_sigma: Matrix },
}

const ENCODE_CHUNK: usize = 256;

impl EncodedShard {
    pub fn encode(task: usize, shard: &LabeledSet, encoder: &Encoder, keep_raw: bool) -> Result<Self> {
        let x = shard.images();
        contract!(x.is_finite(), "task {task} shard contains non-finite pixels");
        let encoded = if encoder.kind() == EncoderKind::Vee {
            let d = encoder.embed_dim();
            let (mut mu, mut ls) = (Vec::with_capacity(x.rows() * d), Vec::with_capacity(x.rows() * d));
            for start in (0..x.rows()).step_by(ENCODE_CHUNK) {
                let idx: Vec<usize> = (start..(start + ENCODE_CHUNK).min(x.rows())).collect();
                if let EncoderHead::Gaussian { mu: m, log_sigma: l } = encoder.forward(&x.select_rows(&idx))?.0 {
                    mu.extend_from_slice(m.data());
                    ls.extend_from_slice(l.data());
                }
            }
            Encoded::Stats {
                mu: Matrix::from_vec(x.rows(), d, mu)?,
                log_sigma: Matrix::from_vec(x.rows(), d, ls)?,
            }
        } else {
            Encoded::Points(encoder.encode_points(x)?)
        };
        Ok(EncodedShard {
            task,
            labels: shard.labels().to_vec(),
            encoded,
            raw: keep_raw.then(|| x.clone()),
        })
    }

    pub fn task(&self) -> usize {
        self.task
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Training embeddings for rows `idx`; variational rows are sampled.
    pub fn embed(&self, idx: &[usize], rng: &mut RngStream) -> Result<Matrix> {
        match &self.encoded {
            Encoded::Points(z) => Ok(z.select_rows(idx)),
            Encoded::Stats { mu, log_sigma } => {
                let mut out = Vec::with_capacity(idx.len() * mu.cols());
                for &i in idx {
                    out.extend(reparam_sample(mu.row(i), log_sigma.row(i), rng).0);
                }
                Matrix::from_vec(idx.len(), mu.cols(), out)
            }
        }
    }

    /// One record per example, carrying the payload `kind`.
    pub fn records(&self, kind: PayloadKind, round: usize) -> Result<Vec<RehearsalRecord>> {
        (0..self.len())
            .map(|i| {
                let payload = match (kind, &self.encoded) {
                    (PayloadKind::Raw, _) => match &self.raw {
                        Some(x) => Payload::Raw(x.row(i).to_vec()),
                        None => return Err(crate::Error::Contract("raw samples were not retained".into())),
                    },
                    (PayloadKind::Embedding, Encoded::Points(z)) => Payload::Embedding(z.row(i).to_vec()),
                    (PayloadKind::Stats, Encoded::Stats { mu, log_sigma }) => Payload::Stats(GaussianStats {
                        mu: mu.row(i).to_vec(),
                        log_sigma: log_sigma.row(i).to_vec(),
                    }),
                    (k, _) => {
                        return Err(crate::Error::Contract(format!(
                            "{k:?} records cannot be built from this encoder's output"
                        )))
                    }
                };
                Ok(RehearsalRecord {
                    payload,
                    label: self.labels[i],
                    task_id: self.task,
                    round_id: round,
                })
            })
            .collect()
    }
}

/// Everything a client owns between rounds.
#[derive(Clone, Debug)]
pub struct ClientState {
    pub id: usize,
    pub enrollment: Enrollment,
    /// Local rehearsal memory; absent when the strategy keeps none.
    pub buffer: Option<RehearsalBuffer>,
    pub current: Option<EncodedShard>,
}

impl ClientState {
    pub fn new(id: usize, buffer: Option<RehearsalBuffer>) -> Self {
        ClientState {
            id,
            enrollment: Enrollment::NotEnrolledYet,
            buffer,
            current: None,
        }
    }
}

/// Read-only inputs shared by all clients in a round.
#[derive(Clone, Copy, Debug)]
pub struct RoundContext<'a> {
    pub encoder: &'a Encoder,
    pub classifier: &'a ClassifierSpec,
    pub strategy: StrategyKind,
    pub fl: &'a FLConfig,
    pub task: usize,
    pub round: usize,
}

#[derive(Clone, Debug)]
pub struct LocalUpdate {
    pub client: usize,
    pub params: ParamVector,
    /// Records sent to the server this round.
    pub upload: Vec<RehearsalRecord>,
    pub samples: usize,
    /// Mean training loss over the local steps (NaN when no step ran).
    pub train_loss: f64,
}

pub(crate) fn vstack(a: Matrix, b: &Matrix) -> Result<Matrix> {
    if b.rows() == 0 {
        return Ok(a);
    }
    contract!(a.cols() == b.cols(), "cannot stack {} and {} columns", a.cols(), b.cols());
    let rows = a.rows() + b.rows();
    let cols = a.cols();
    let mut data = a.into_vec();
    data.extend_from_slice(b.data());
    Matrix::from_vec(rows, cols, data)
}

/// Runs `local_iters` SGD steps from `global` on the client's current shard,
/// mixing in replay from its own buffer, then builds this round's upload.
pub fn local_train(client: &mut ClientState, global: &ParamVector, ctx: &RoundContext<'_>, rng: &mut RngStream) -> Result<LocalUpdate> {
    contract!(
        client.enrollment == Enrollment::Active,
        "client {} is {:?} and cannot train",
        client.id,
        client.enrollment
    );
    let shard = client
        .current
        .as_ref()
        .filter(|s| s.task() == ctx.task)
        .ok_or_else(|| crate::Error::Contract(format!("client {} has no data for task {}", client.id, ctx.task)))?;
    contract!(!shard.is_empty(), "client {} has an empty shard", client.id);
    let mut clf = Classifier::from_params(*ctx.classifier, global.clone())?;
    let n = shard.len();
    let batch = ctx.fl.batch_size;
    let mut loss_sum = 0.0;
    for _ in 0..ctx.fl.local_iters {
        let replay_n = match &client.buffer {
            Some(b) if !b.is_empty() => batch / 2,
            _ => 0,
        };
        let fresh_n = batch - replay_n;
        let idx: Vec<usize> = if fresh_n <= n {
            index::sample(rng, n, fresh_n).into_vec()
        } else {
            (0..fresh_n).map(|_| rng.below(n)).collect()
        };
        let mut z = shard.embed(&idx, rng)?;
        let mut y: Vec<usize> = idx.iter().map(|&i| shard.labels()[i]).collect();
        if replay_n > 0 {
            let buf = client.buffer.as_ref().expect("replay_n > 0 implies a buffer");
            let (zr, yr) = buf.replay(replay_n, ctx.encoder, rng)?;
            z = vstack(z, &zr)?;
            y.extend(yr);
        }
        let (loss, grad) = clf.loss_and_grad(&z, &y)?;
        clf.params_mut().axpy(-ctx.fl.eta_t, &grad)?;
        loss_sum += loss;
    }
    let mut upload = Vec::new();
    if let (Some(local), Some(buf)) = (ctx.strategy.local_payload(), client.buffer.as_mut()) {
        let candidates = shard.records(local, ctx.round)?;
        let chosen = buf.admit(&candidates, rng)?;
        upload = chosen
            .iter()
            .map(|&i| candidates[i].to_upload(ctx.strategy, rng))
            .collect::<Result<_>>()?;
    }
    Ok(LocalUpdate {
        client: client.id,
        params: clf.into_params(),
        upload,
        samples: n,
        train_loss: loss_sum / ctx.fl.local_iters as f64,
    })
}
