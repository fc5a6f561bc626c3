use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::record::PayloadKind;
use crate::error::{contract, Result};
use crate::models::EncoderKind;

/// Bytes per stored real number in the memory accounting (single precision,
/// the usual storage format for images and embeddings).
pub const STORED_SCALAR_BYTES: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    /// No rehearsal: plain FedAvg on the current task.
    None,
    /// Embedding rehearsal through a frozen, untrained random encoder.
    Noise,
    /// Raw samples, embedded at replay time.
    Naive,
    /// Deterministic embeddings.
    Ebr,
    /// Clients share per-example `(mu, log σ)`; the server resamples.
    VerStats,
    /// Clients share only sampled embeddings.
    VerSampled,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 6] = [
        StrategyKind::None,
        StrategyKind::Noise,
        StrategyKind::Naive,
        StrategyKind::Ebr,
        StrategyKind::VerStats,
        StrategyKind::VerSampled,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::None => "none",
            StrategyKind::Noise => "noise",
            StrategyKind::Naive => "naive",
            StrategyKind::Ebr => "ebr",
            StrategyKind::VerStats => "ver_stats",
            StrategyKind::VerSampled => "ver_sampled",
        }
    }

    /// Payload kept in a client's own buffer.
    pub fn local_payload(self) -> Option<PayloadKind> {
        match self {
            StrategyKind::None => None,
            StrategyKind::Noise | StrategyKind::Ebr => Some(PayloadKind::Embedding),
            StrategyKind::Naive => Some(PayloadKind::Raw),
            StrategyKind::VerStats | StrategyKind::VerSampled => Some(PayloadKind::Stats),
        }
    }

    /// Payload a client transmits to the server.
    pub fn upload_payload(self) -> Option<PayloadKind> {
        match self {
            StrategyKind::None => None,
            StrategyKind::Noise | StrategyKind::Ebr | StrategyKind::VerSampled => Some(PayloadKind::Embedding),
            StrategyKind::Naive => Some(PayloadKind::Raw),
            StrategyKind::VerStats => Some(PayloadKind::Stats),
        }
    }

    pub fn default_encoder(self) -> EncoderKind {
        match self {
            StrategyKind::Noise => EncoderKind::RandomProjection,
            StrategyKind::Naive | StrategyKind::Ebr => EncoderKind::Ebr,
            StrategyKind::None | StrategyKind::VerStats | StrategyKind::VerSampled => EncoderKind::Vee,
        }
    }

    /// Whether the strategy can run on top of an encoder of kind `k`.
    pub fn accepts_encoder(self, k: EncoderKind) -> bool {
        match self {
            StrategyKind::None | StrategyKind::Naive => true,
            StrategyKind::Noise => k == EncoderKind::RandomProjection,
            StrategyKind::Ebr => k == EncoderKind::Ebr,
            StrategyKind::VerStats | StrategyKind::VerSampled => k == EncoderKind::Vee,
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = StrategyKind::ALL.iter().map(|k| k.as_str()).collect();
                format!("unknown strategy {s:?}; expected one of {}", names.join(", "))
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryMultiplier {
    /// As many records as the naive strategy would store samples.
    X1,
    /// As many records as fit in the naive strategy's byte budget.
    X16,
}

impl FromStr for MemoryMultiplier {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "x1" => Ok(MemoryMultiplier::X1),
            "x16" => Ok(MemoryMultiplier::X16),
            _ => Err(format!("unknown memory multiplier {s:?}; expected x1 or x16")),
        }
    }
}

impl fmt::Display for MemoryMultiplier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            MemoryMultiplier::X1 => "x1",
            MemoryMultiplier::X16 => "x16",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    /// Fraction of candidates admitted per round.
    pub rho: f64,
    pub memory: MemoryMultiplier,
    /// Server buffer size in naive-sample units, before the memory multiplier.
    pub capacity: usize,
    /// Per-client buffer size in naive-sample units.
    pub client_capacity: usize,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        StrategyConfig {
            kind: StrategyKind::VerSampled,
            rho: 0.1,
            memory: MemoryMultiplier::X1,
            capacity: 2000,
            client_capacity: 400,
        }
    }
}

impl StrategyConfig {
    pub fn validate(&self) -> Result<()> {
        contract!((0.0..=1.0).contains(&self.rho), "rho {} must lie in [0, 1]", self.rho);
        Ok(())
    }
}

/// Buffer capacity for a byte budget expressed in naive samples.
///
/// `X1` keeps the record count equal to `naive_count`; `X16` spends the same
/// bytes on `floor(naive_count · raw_bytes / embed_bytes)` smaller records.
pub fn memory_budget(memory: MemoryMultiplier, naive_count: usize, raw_bytes_per_sample: usize, embed_bytes: usize) -> Result<usize> {
    contract!(
        raw_bytes_per_sample > 0 && embed_bytes > 0,
        "record sizes must be positive"
    );
    Ok(match memory {
        MemoryMultiplier::X1 => naive_count,
        MemoryMultiplier::X16 => ((naive_count as u128 * raw_bytes_per_sample as u128) / embed_bytes as u128) as usize,
    })
}

/// Stored size of one record payload, for an input of `pixels` values and embeddings of dimension `d`.
pub fn payload_bytes(kind: PayloadKind, pixels: usize, d: usize) -> usize {
    STORED_SCALAR_BYTES
        * match kind {
            PayloadKind::Raw => pixels,
            PayloadKind::Embedding => d,
            PayloadKind::Stats => 2 * d,
        }
}
