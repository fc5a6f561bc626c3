use serde::{Deserialize, Serialize};

use super::strategy::StrategyKind;
use crate::error::{contract, Result};
use crate::models::{EncoderHead, EncoderKind, Encoder, GaussianStats};
use crate::numcore::{reparam_sample, Matrix, RngStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadKind {
    Raw,
    Embedding,
    Stats,
}

impl PayloadKind {
    pub(crate) fn code(self) -> u8 {
        match self {
            PayloadKind::Raw => 0,
            PayloadKind::Embedding => 1,
            PayloadKind::Stats => 2,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(PayloadKind::Raw),
            1 => Some(PayloadKind::Embedding),
            2 => Some(PayloadKind::Stats),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    /// A raw input sample.
    Raw(Vec<f64>),
    /// An embedding `z`, deterministic or sampled.
    Embedding(Vec<f64>),
    /// Per-example Gaussian statistics.
    Stats(GaussianStats),
}

impl Payload {
    pub fn kind(&self) -> PayloadKind {
        match self {
            Payload::Raw(_) => PayloadKind::Raw,
            Payload::Embedding(_) => PayloadKind::Embedding,
            Payload::Stats(_) => PayloadKind::Stats,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RehearsalRecord {
    pub payload: Payload,
    pub label: usize,
    pub task_id: usize,
    pub round_id: usize,
}

impl RehearsalRecord {
    /// The form of a client-held record that is sent to the server.
    ///
    /// Under `VerSampled` statistics are replaced by one fresh sample, so the
    /// server never sees them.
    pub fn to_upload(&self, strategy: StrategyKind, rng: &mut RngStream) -> Result<RehearsalRecord> {
        let Some(want) = strategy.upload_payload() else {
            return Err(crate::Error::Contract(format!("strategy {strategy} uploads nothing")));
        };
        let payload = match (&self.payload, want) {
            (Payload::Stats(s), PayloadKind::Embedding) => Payload::Embedding(s.sample(rng)),
            (p, want) if p.kind() == want => p.clone(),
            (p, want) => {
                return Err(crate::Error::Contract(format!(
                    "cannot upload a {:?} payload as {want:?} under {strategy}",
                    p.kind()
                )))
            }
        };
        Ok(RehearsalRecord {
            payload,
            label: self.label,
            task_id: self.task_id,
            round_id: self.round_id,
        })
    }
}

/// Embedding and label for one record.
///
/// Stored embeddings come back unchanged; statistics are resampled on every
/// call; raw samples go through the frozen encoder (sampled if variational).
pub fn materialize(record: &RehearsalRecord, expected: PayloadKind, encoder: &Encoder, rng: &mut RngStream) -> Result<(Vec<f64>, usize)> {
    let (z, y) = materialize_batch(std::slice::from_ref(record), expected, encoder, rng)?;
    Ok((z.into_vec(), y[0]))
}

/// Batched [`materialize`]; raw samples are encoded in one pass.
pub fn materialize_batch(records: &[RehearsalRecord], expected: PayloadKind, encoder: &Encoder, rng: &mut RngStream) -> Result<(Matrix, Vec<usize>)> {
    let d = encoder.embed_dim();
    let labels: Vec<usize> = records.iter().map(|r| r.label).collect();
    for r in records {
        contract!(
            r.payload.kind() == expected,
            "buffer expects {expected:?} payloads, found {:?}",
            r.payload.kind()
        );
    }
    let mut out = Vec::with_capacity(records.len() * d);
    match expected {
        PayloadKind::Embedding => {
            for r in records {
                if let Payload::Embedding(z) = &r.payload {
                    contract!(z.len() == d, "stored embedding has dimension {}, encoder {d}", z.len());
                    out.extend_from_slice(z);
                }
            }
        }
        PayloadKind::Stats => {
            for r in records {
                if let Payload::Stats(s) = &r.payload {
                    contract!(s.dim() == d, "stored statistics have dimension {}, encoder {d}", s.dim());
                    out.extend(reparam_sample(&s.mu, &s.log_sigma, rng).0);
                }
            }
        }
        PayloadKind::Raw => {
            if records.is_empty() {
                return Ok((Matrix::zeros(0, d), labels));
            }
            let rows: Vec<&[f64]> = records
                .iter()
                .map(|r| match &r.payload {
                    Payload::Raw(x) => x.as_slice(),
                    _ => unreachable!("payload kinds checked above"),
                })
                .collect();
            let x = Matrix::from_rows(&rows)?;
            if encoder.kind() == EncoderKind::Vee {
                match encoder.forward(&x)?.0 {
                    EncoderHead::Gaussian { mu, log_sigma } => {
                        for i in 0..mu.rows() {
                            out.extend(reparam_sample(mu.row(i), log_sigma.row(i), rng).0);
                        }
                    }
                    EncoderHead::Point(_) => unreachable!("variational encoder"),
                }
            } else {
                out = encoder.encode_points(&x)?.into_vec();
            }
        }
    }
    Ok((Matrix::from_vec(records.len(), d, out)?, labels))
}
