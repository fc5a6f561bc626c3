//! Rehearsal memories and the strategies that fill them.
//!
//! A [`RehearsalRecord`] carries one of three payloads: a raw sample, an
//! embedding or per-example Gaussian statistics. Which payload a strategy keeps
//! locally and which one it transmits is fixed by [`StrategyKind`]; in
//! particular `VerSampled` converts statistics to a single sample before
//! anything leaves the client.

mod buffer;
mod record;
mod strategy;

pub use buffer::{sample_admission, RehearsalBuffer, BUFFER_FORMAT_VERSION};
pub use record::{materialize, materialize_batch, Payload, PayloadKind, RehearsalRecord};
pub use strategy::{memory_budget, payload_bytes, MemoryMultiplier, StrategyConfig, StrategyKind, STORED_SCALAR_BYTES};
