//! Simulator for federated incremental learning with variational embedding
//! rehearsal.
//!
//! A frozen encoder maps images to embeddings; a small classifier is trained
//! with FedAvg across tasks that arrive one after another, while clients and
//! the server replay stored embeddings (or Gaussian embedding statistics) to
//! limit forgetting.

mod codec;
mod error;

pub mod datasets;
pub mod federation;
pub mod models;
pub mod numcore;
pub mod rehearsal;
pub mod runner;
pub mod scenarios;

pub use error::{Error, Result};

// The book's code blocks run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/numcore.md")]
    mod numcore {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/rehearsal.md")]
    mod rehearsal {}
    #[doc = include_str!("../../../book/src/federation.md")]
    mod federation {}
    #[doc = include_str!("../../../book/src/scenarios.md")]
    mod scenarios {}
    #[doc = include_str!("../../../book/src/configuration.md")]
    mod configuration {}
    #[doc = include_str!("../../../book/src/reproducibility.md")]
    mod reproducibility {}
}
