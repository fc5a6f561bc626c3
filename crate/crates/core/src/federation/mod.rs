//! The federated incremental loop.
//!
//! Each round samples clients among those enrolled for the current task, runs
//! local SGD on frozen-encoder embeddings mixed with local replay, pools the
//! uploaded rehearsal records in a server buffer, averages the client models
//! weighted by sample count and finally runs a few server-side SGD steps on
//! replayed records.
//!
//! All randomness is drawn from streams keyed by `(seed, purpose, client,
//! round)`, so the outcome does not depend on how many threads run the clients.

mod aggregate;
mod client;
mod config;
mod offline;
mod server;
mod sim;

pub use aggregate::fedavg_aggregate;
pub use client::{local_train, ClientState, EncodedShard, LocalUpdate, RoundContext};
pub use config::FLConfig;
pub use offline::{offline_joint_training, OfflineConfig, OfflineOutcome};
pub use server::{server_side_training, SstConfig};
pub use sim::{pretrain_for, RoundReport, SimSetup, Simulation};
